"""Variable-coefficient operators: differences, assembly, estimate, rates.

The d=1 form identity and the discrete elliptic estimate are checked against
oracles that never touch the sparse assembly: a direct quadratic-form
summation and a dense generalized-eigenvalue pencil.
"""

import json

import numpy as np
import pytest

from lattice_limits.convergence import resolvent_difference_norm
from lattice_limits.elliptic import (
    CoefficientField,
    TorusOperator,
    assemble,
    difference_apply,
    difference_multiplier,
    elliptic_convergence,
    elliptic_estimate_check,
    identity_coefficients,
    load_coefficients,
    torus_sites,
)
from lattice_limits.embedding import build_cutoff
from lattice_limits.lattice import make_preset
from lattice_limits.symbols import eval_p0h

RNG = np.random.default_rng

VAR_1D = CoefficientField(d=1, a_exprs=(("2+sin(2*pi*x1/L)",),),
                          V_expr="1+cos(2*pi*x1/L)", c0=1.0)
VAR_2D = CoefficientField(
    d=2,
    a_exprs=(("2+sin(2*pi*x1/L)", "0.25*cos(2*pi*x2/L)"),
             ("0.25*cos(2*pi*x2/L)", "2+cos(2*pi*x2/L)")),
    V_expr="0.5*sin(2*pi*(x1+x2)/L)", c0=0.7)


@pytest.fixture(scope="module")
def sq1_profile():
    return build_cutoff(make_preset("square_1"))


def _random_field(shape, rng):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


# -- coefficient registry ------------------------------------------------------


def test_document_roundtrip(tmp_path):
    doc = VAR_2D.to_document()
    assert CoefficientField.from_document(doc) == VAR_2D
    p = tmp_path / "coeffs.json"
    p.write_text(json.dumps(doc))
    assert load_coefficients(p) == VAR_2D


def test_symmetry_must_hold_as_written():
    with pytest.raises(ValueError, match="symmetric"):
        CoefficientField(d=2, a_exprs=(("1", "x1"), ("x2", "1")),
                         V_expr="0", c0=0.5)


def test_shape_and_c0_validation():
    with pytest.raises(ValueError, match="formula matrix"):
        CoefficientField(d=2, a_exprs=(("1",),), V_expr="0", c0=1.0)
    with pytest.raises(ValueError, match="c0"):
        CoefficientField(d=1, a_exprs=(("1",),), V_expr="0", c0=0.0)


def test_bad_formula_rejected():
    cf = CoefficientField(d=1, a_exprs=(("__import__('os')",),), V_expr="0", c0=1.0)
    with pytest.raises(ValueError, match="cannot evaluate"):
        cf.a_matrix(np.zeros((1, 1)), 1.0)


def test_identity_coefficients():
    cf = identity_coefficients(2)
    a = cf.a_matrix(RNG(0).normal(size=(5, 2)), 1.0)
    assert np.array_equal(a, np.broadcast_to(np.eye(2), (5, 2, 2)))
    assert np.array_equal(cf.V(np.zeros((3, 2)), 1.0), np.zeros(3))


def test_shared_evaluation_is_exactly_symmetric():
    x = RNG(1).normal(size=(40, 2))
    a = VAR_2D.a_matrix(x, 1.0)
    assert np.array_equal(a, a.swapaxes(-1, -2))


# -- divided differences -------------------------------------------------------


def test_difference_of_constant_is_zero():
    u = np.full((6, 6), 2.7 - 0.3j)
    for sign in (+1, -1):
        for j in (0, 1):
            assert np.all(difference_apply(sign, j, 0.25, u) == 0)


def test_difference_adjoint_pairs():
    # <D+ u, v> = <u, D- v> on the plain torus inner product
    rng = RNG(2)
    for _ in range(100):
        u = _random_field((8, 8), rng)
        v = _random_field((8, 8), rng)
        for j in (0, 1):
            lhs = np.vdot(difference_apply(+1, j, 0.5, u), v)
            rhs = np.vdot(u, difference_apply(-1, j, 0.5, v))
            assert abs(lhs - rhs) < 1e-12 * (abs(lhs) + 1)


def test_difference_axis_and_sign_errors():
    u = np.zeros((4, 4))
    with pytest.raises(ValueError, match="out of range"):
        difference_apply(+1, 2, 0.5, u)
    with pytest.raises(ValueError, match="sign"):
        difference_apply(0, 0, 0.5, u)


def test_plane_wave_multiplier():
    N, h = 16, 1.0 / 16
    n = np.arange(N)
    for k in (1, 3, 7):
        xi = k / (N * h)
        wave = np.exp(2j * np.pi * xi * h * n)
        for sign in (+1, -1):
            got = difference_apply(sign, 0, h, wave)
            m = difference_multiplier(sign, 0, h, np.array([[xi]]))[0]
            assert np.allclose(got, m * wave, atol=1e-12 * abs(m))
    # the two multipliers are complex conjugates of each other
    xi = RNG(3).normal(size=(50, 1))
    mp = difference_multiplier(+1, 0, 0.25, xi)
    mm = difference_multiplier(-1, 0, 0.25, xi)
    assert np.allclose(mm, np.conj(mp), atol=1e-14)


def test_multiplier_defect_bound_and_stability():
    # |m(xi) - 2 pi xi_j| <= 2 pi^2 h |xi|^2, with the worst ratio stable in h
    xi = np.linspace(-3, 3, 121).reshape(-1, 1)
    keep = np.abs(xi[:, 0]) > 1e-9
    worst = []
    for e in range(1, 9):
        h = 2.0**-e
        m = difference_multiplier(+1, 0, h, xi)
        ratio = np.abs(m - 2 * np.pi * xi[:, 0])[keep] / (h * xi[keep, 0] ** 2)
        assert ratio.max() <= 2 * np.pi**2 * (1 + 1e-9)
        worst.append(ratio.max())
    assert max(worst) / min(worst) < 1.5


# -- assembly ------------------------------------------------------------------


def test_h0h_matches_discrete_symbol():
    lat = make_preset("square_2")
    N, h = 8, 0.125
    H0 = assemble(None, 2, h, N, "H0h")
    n = np.indices((N, N))
    for k in ((1, 0), (2, 3), (5, 7)):
        xi = np.array(k, dtype=float) / (N * h)
        wave = np.exp(2j * np.pi * h * (k[0] * n[0] + k[1] * n[1]) / (N * h))
        want = float(eval_p0h(lat, h, xi))
        got = H0.apply(wave)
        assert np.allclose(got, want * wave, atol=1e-8 * max(want, 1))
        # and the symbol is the product of the two difference multipliers
        prod = sum(abs(difference_multiplier(+1, j, h, xi[None, :])[0]) ** 2
                   for j in range(2))
        assert abs(prod - want) < 1e-10 * want


def test_constant_coefficient_factorizations_coincide():
    # sum_j D+ D- == sum_j D- D+ == H0h as exact matrices when a = I, V = 0
    cf = identity_coefficients(2)
    N, h = 6, 0.25
    plus = assemble(cf, 2, h, N, "P_plus").matrix
    minus = assemble(cf, 2, h, N, "P_minus").matrix
    h0 = assemble(None, 2, h, N, "H0h").matrix
    assert abs(plus - minus).max() == 0
    assert abs(plus - h0).max() == 0


def test_form_identity_1d_oracle():
    # oracle: direct summation of the quadratic form, no matrices involved
    N, h = 64, 1.0 / 64
    L = N * h
    x = torus_sites(1, h, N)[:, 0]
    a = 2 + np.sin(2 * np.pi * x / L)
    V = 1 + np.cos(2 * np.pi * x / L)
    P = assemble(VAR_1D, 1, h, N, "P_plus")
    rng = RNG(4)
    for _ in range(10):
        u = _random_field(N, rng)
        du = (np.roll(u, -1) - u) / (1j * h)
        form = (a * np.abs(du) ** 2).sum() + (V * np.abs(u) ** 2).sum()
        quad = np.vdot(u, P.apply(u))
        assert abs(quad.imag) < 1e-10 * abs(quad)
        assert abs(quad.real - form) < 1e-10 * form


def test_form_identity_full_matrix_2d():
    N, h = 8, 0.125
    rng = RNG(5)
    x = torus_sites(2, h, N)
    amat = VAR_2D.a_matrix(x, N * h).reshape(N, N, 2, 2)
    V = VAR_2D.V(x, N * h).reshape(N, N)
    for variant, sign in (("P_plus", +1), ("P_minus", -1)):
        P = assemble(VAR_2D, 2, h, N, variant)
        for _ in range(5):
            u = _random_field((N, N), rng)
            D = np.stack([difference_apply(sign, j, h, u) for j in range(2)], axis=-1)
            form = np.einsum("xyj,xyjk,xyk->", np.conj(D), amat, D)
            form = form + (V * np.abs(u) ** 2).sum()
            quad = np.vdot(u, P.apply(u))
            assert abs(quad - form) < 1e-10 * abs(form)


def test_diagonal_coefficients_give_edge_weight_form():
    # for diagonal a the form is a sum over nearest-neighbor edges
    cf = CoefficientField(d=2, a_exprs=(("2+sin(2*pi*x1/L)", "0"),
                                        ("0", "1+0.5*cos(2*pi*x2/L)")),
                          V_expr="x1+1", c0=0.5)
    N, h = 6, 0.25
    x = torus_sites(2, h, N)
    amat = cf.a_matrix(x, N * h).reshape(N, N, 2, 2)
    V = cf.V(x, N * h).reshape(N, N)
    P = assemble(cf, 2, h, N, "P_plus")
    u = _random_field((N, N), RNG(6))
    edge_sum = 0.0
    for j in range(2):
        diff = np.roll(u, -1, axis=j) - u          # edge (x, x + h e_j)
        edge_sum += (amat[..., j, j] * np.abs(diff) ** 2).sum() / h**2
    edge_sum += (V * np.abs(u) ** 2).sum()
    quad = np.vdot(u, P.apply(u)).real
    assert abs(quad - edge_sum) < 1e-10 * edge_sum


def test_stencil_row_structure():
    # composition gives -a(x - h e_j) couplings to x + h e_k - h e_j neighbors,
    # with the cross term carrying coefficient +a_12(x - h e_1) / h^2
    N, h = 8, 0.125
    Q = assemble(VAR_2D, 2, h, N, "Q_plus")
    M = Q.matrix.toarray()
    a = VAR_2D.a_matrix(torus_sites(2, h, N), N * h).reshape(N, N, 2, 2)
    idx = np.arange(N * N).reshape(N, N)
    i, j = 2, 3
    row = idx[i, j]
    cross = M[row, idx[i - 1, j + 1]] * h**2
    assert abs(cross - a[i - 1, j, 0, 1]) < 1e-13
    straight = M[row, idx[i, j + 1]] * h**2
    assert abs(straight + a[i, j, 0, 1] + a[i, j, 1, 1]) < 1e-13
    diag = M[row, row] * h**2
    want = a[i, j].sum() + a[i - 1, j, 0, 0] + a[i, j - 1, 1, 1]
    assert abs(diag - want) < 1e-13


def test_assemble_symmetry_and_real_entries():
    for variant in ("P_plus", "P_minus", "Q_plus", "Q_minus"):
        op = assemble(VAR_2D, 2, 0.25, 6, variant)
        M = op.matrix
        assert M.dtype == np.float64
        assert abs(M - M.T).max() < 1e-12


def test_potential_is_the_difference_of_p_and_q():
    N, h = 16, 1.0 / 16
    P = assemble(VAR_1D, 1, h, N, "P_plus").matrix
    Q = assemble(VAR_1D, 1, h, N, "Q_plus").matrix
    V = VAR_1D.V(torus_sites(1, h, N), 1.0)
    assert abs((P - Q) - np.diag(V)).max() < 1e-12


def test_qh_alias_and_unknown_variant():
    op = assemble(VAR_1D, 1, 0.125, 8, "Qh")
    assert op.variant == "Q_plus"
    with pytest.raises(ValueError, match="variant"):
        assemble(VAR_1D, 1, 0.125, 8, "nope")


def test_ellipticity_violation_rejected():
    cf = CoefficientField(d=1, a_exprs=(("sin(2*pi*x1/L)",),), V_expr="0", c0=0.5)
    with pytest.raises(ValueError, match="ellipticity"):
        assemble(cf, 1, 0.125, 8, "P_plus")


def test_quadratic_form_positivity():
    # <u, Q+- u> >= c0 ||D+- u||^2 pointwise ellipticity consequence
    rng = RNG(7)
    for cf, d, N in ((VAR_1D, 1, 32), (VAR_2D, 2, 8)):
        h = 1.0 / N
        for variant, sign in (("Q_plus", +1), ("Q_minus", -1)):
            Q = assemble(cf, d, h, N, variant)
            for _ in range(10):
                u = _random_field((N,) * d, rng)
                lhs = np.vdot(u, Q.apply(u)).real
                d2 = sum(np.abs(difference_apply(sign, j, h, u)) ** 2
                         for j in range(d)).sum()
                assert lhs >= cf.c0 * d2 - 1e-10 * max(lhs, 1)


def test_relative_boundedness_of_potential():
    # sup ||V u|| / (||P u|| + ||u||) stays bounded and h-independent; the
    # sup lives on constants and low modes, random fields only undercut it
    sups = []
    rng = RNG(8)
    for e in (3, 4, 5, 6):
        N, h = 2**e, 2.0**-e
        P = assemble(VAR_1D, 1, h, N, "P_plus")
        V = VAR_1D.V(torus_sites(1, h, N), 1.0)
        probes = [np.exp(2j * np.pi * m * np.arange(N) / N) for m in range(4)]
        probes += [_random_field(N, rng) for _ in range(20)]
        sup = 0.0
        for u in probes:
            u = u / np.linalg.norm(u)
            sup = max(sup, np.linalg.norm(V * u) / (np.linalg.norm(P.apply(u)) + 1))
        sups.append(sup)
    assert max(sups) < 1.0
    assert max(sups) / min(sups) < 1.2


# -- the elliptic estimate -----------------------------------------------------


def _pencil_c1(P: TorusOperator, H0: TorusOperator, c2: float) -> float:
    """Largest c1 with P^2 + c2 - c1 H0^2 >= 0: dense eigen-pencil with the
    H0 kernel removed by a Schur complement."""
    Pd = P.matrix.toarray()
    ev, U = np.linalg.eigh(H0.matrix.toarray())
    M = U.T @ (Pd @ Pd + c2 * np.eye(len(ev))) @ U
    ker = ev < 1e-8 * ev.max()
    kb, nb = np.where(ker)[0], np.where(~ker)[0]
    Mbb = M[np.ix_(nb, nb)]
    if len(kb):
        Mbb = Mbb - M[np.ix_(nb, kb)] @ np.linalg.solve(M[np.ix_(kb, kb)],
                                                        M[np.ix_(kb, nb)])
    dinv = 1.0 / ev[nb]
    return float(np.linalg.eigvalsh(dinv[:, None] * Mbb * dinv[None, :]).min())


def test_estimate_identity_coefficients():
    N, h = 16, 1.0 / 16
    P = assemble(identity_coefficients(1), 1, h, N, "P_plus")
    H0 = assemble(None, 1, h, N, "H0h")
    out = elliptic_estimate_check(P, H0)
    assert abs(out["c1_est"] - 1.0) < 1e-12
    assert out["c2_est"] == 0.0


def test_estimate_against_pencil_oracle():
    for N, e in ((16, 4), (32, 5)):
        h = 2.0**-e
        P = assemble(VAR_1D, 1, h, N, "P_plus")
        H0 = assemble(None, 1, h, N, "H0h")
        out = elliptic_estimate_check(P, H0)
        for c2 in (0.0, 4.0):
            truth = _pencil_c1(P, H0, c2)
            assert truth > 0.9            # the true constant is itself healthy
            assert out["c1_by_c2"][c2] >= truth - 1e-9
            assert out["c1_by_c2"][c2] <= 1.5 * truth


def test_estimate_floor_uniform_in_h():
    for e in (3, 4, 5, 6):
        N, h = 2**e, 2.0**-e
        P = assemble(VAR_1D, 1, h, N, "P_plus")
        H0 = assemble(None, 1, h, N, "H0h")
        out = elliptic_estimate_check(P, H0)
        assert out["c1_est"] >= 0.5
        assert out["c2_est"] == 0.0


def test_estimate_floor_2d():
    for e in (3, 4):
        N, h = 2**e, 2.0**-e
        P = assemble(VAR_2D, 2, h, N, "P_plus")
        H0 = assemble(None, 2, h, N, "H0h")
        out = elliptic_estimate_check(P, H0)
        assert out["c1_est"] >= 0.5


def test_estimate_c2_stable_under_doubling():
    h = 2.0**-4
    vals = []
    for N in (16, 32):
        P = assemble(VAR_1D, 1, h, N, "P_plus")
        H0 = assemble(None, 1, h, N, "H0h")
        vals.append(elliptic_estimate_check(P, H0)["c2_est"])
    assert vals[0] == vals[1]


def test_estimate_rejects_mismatched_tori():
    P = assemble(VAR_1D, 1, 0.125, 8, "P_plus")
    H0 = assemble(None, 1, 0.0625, 16, "H0h")
    with pytest.raises(ValueError, match="different tori"):
        elliptic_estimate_check(P, H0)


# -- resolvent convergence -----------------------------------------------------


def test_convergence_rejects_real_z_and_wrong_profile(sq1_profile):
    with pytest.raises(ValueError, match="non-real"):
        elliptic_convergence(VAR_1D, sq1_profile, z=2.0)
    tri = build_cutoff(make_preset("triangular"))
    with pytest.raises(ValueError, match="square_1"):
        elliptic_convergence(VAR_1D, tri, z=1j)


def _exact_free_difference_norm(profile, h, z, ref):
    """Free case on the torus is diagonal over coarse fibers; enumerate them."""
    N = round(1.0 / h)
    Nf, hf = N * ref, h / ref
    kf = np.fft.fftfreq(Nf, d=1.0 / Nf)
    g_ref = 1.0 / ((2.0 / hf**2) * (1 - np.cos(2 * np.pi * hf * kf)) - z)
    g_lat = 1.0 / ((2.0 / h**2) * (1 - np.cos(2 * np.pi * h * kf)) - z)
    v = profile.phihat(kf.reshape(-1, 1) * h)
    cls = np.round(kf).astype(int) % N
    best = 0.0
    for r in range(N):
        sel = np.where(cls == r)[0]
        blk = np.diag(g_ref[sel]) - g_lat[sel[0]] * np.outer(v[sel], v[sel])
        best = max(best, np.linalg.svd(blk, compute_uv=False)[0])
    return best


def test_free_convergence_matches_fiber_enumeration(sq1_profile):
    rep = elliptic_convergence(identity_coefficients(1), sq1_profile, z=1j,
                               h_exponents=range(3, 6))
    for h, norm in zip(rep.h_values, rep.norms):
        exact = _exact_free_difference_norm(sq1_profile, h, 1j, 8)
        assert abs(norm - exact) < 1e-2 * exact


def test_free_convergence_rate_and_fiber_agreement(sq1_profile):
    rep = elliptic_convergence(identity_coefficients(1), sq1_profile, z=1j,
                               h_exponents=range(3, 8))
    assert 1.9 <= rep.slope <= 2.1
    assert rep.r_squared >= 0.99
    assert all(a > b for a, b in zip(rep.norms, rep.norms[1:]))
    lat = make_preset("square_1")
    for h, norm in zip(rep.h_values, rep.norms):
        fiber = resolvent_difference_norm(sq1_profile, lat, h, 1j).value
        assert abs(norm - fiber) <= 0.1 * fiber


def test_variable_coefficient_rate(sq1_profile):
    rep = elliptic_convergence(VAR_1D, sq1_profile, z=1j, h_exponents=range(3, 8))
    assert rep.slope >= 0.8
    assert rep.r_squared >= 0.95
    assert all(a > b for a, b in zip(rep.norms, rep.norms[1:]))
    doc = rep.to_document()
    assert doc["grid_config"]["ref_factor"] == 8
    assert doc["grid_config"]["coefficients"]["c0"] == 1.0
    json.dumps(doc)


def test_variants_converge_at_the_same_rate(sq1_profile):
    plus = elliptic_convergence(VAR_1D, sq1_profile, z=1j,
                                h_exponents=range(3, 7), variant="P_plus")
    minus = elliptic_convergence(VAR_1D, sq1_profile, z=1j,
                                 h_exponents=range(3, 7), variant="P_minus")
    assert abs(plus.slope - minus.slope) <= 0.1


def test_convergence_is_deterministic(sq1_profile):
    a = elliptic_convergence(VAR_1D, sq1_profile, z=0.5 + 1j,
                             h_exponents=range(3, 6))
    b = elliptic_convergence(VAR_1D, sq1_profile, z=0.5 + 1j,
                             h_exponents=range(3, 6))
    assert np.array_equal(a.norms, b.norms)
