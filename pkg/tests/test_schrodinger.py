"""Perturbed Hamiltonians: assembly, oscillator spectra, qualitative rates.

The fine-grid eigensolve is the oracle for every spectral claim here; the
free case doubles as a cross-check against the symbol and elliptic modules.
"""

import numpy as np
import pytest

from lattice_limits.elliptic import assemble
from lattice_limits.lattice import make_preset
from lattice_limits.schrodinger import (
    POTENTIAL_NAMES,
    PotentialSpec,
    assemble_Hh,
    centered_sites,
    commutator_defect,
    hausdorff_distance,
    lattice_laplacian,
    lowest_eigenpairs,
    potential,
    resolvent_convergence_qualitative,
    spectra_hausdorff,
)
from lattice_limits.symbols import eval_p0, eval_p0h

SQ1 = make_preset("square_1")
TRI = make_preset("triangular")
OSC = potential("oscillator")


def test_registry_lookup():
    assert OSC.M == 1.0 and OSC.expr == "r2"
    assert set(POTENTIAL_NAMES) == {"zero", "oscillator", "gaussian_well"}
    with pytest.raises(ValueError, match="unknown potential"):
        potential("coulomb")


def test_lower_bound_and_comparability_spot_checks():
    rng = np.random.default_rng(0)
    for name in POTENTIAL_NAMES:
        spec = potential(name)
        x = rng.uniform(-4, 4, size=(200, 2))
        vx = spec.values(x) + spec.M
        assert vx.min() >= 1.0 - 1e-12
        # pairs at distance <= 1
        y = x + rng.uniform(-0.7, 0.7, size=x.shape)
        vy = spec.values(y) + spec.M
        ratio = vy / vx
        assert ratio.max() <= spec.c1 + 1e-12
        assert ratio.min() >= 1.0 / spec.c1 - 1e-12


def test_centered_sites_contain_origin():
    x = centered_sites(TRI, 0.5, 8)
    norms = np.linalg.norm(x, axis=1)
    assert norms.min() == 0.0
    assert abs(x.mean(axis=0)).max() <= 0.5   # centered up to the even-N offset


def test_zero_potential_reduces_to_laplacian():
    zero = potential("zero")
    H = assemble_Hh(SQ1, zero, 0.125, 16)
    H0 = assemble(None, 1, 0.125, 16, "H0h")
    assert abs(H.matrix - H0.matrix).max() == 0
    assert H.variant == "Hh" and H.potential is zero and H.lattice is SQ1


def test_laplacian_diagonalized_by_plane_waves():
    # on any lattice torus the multiplier is the discrete symbol exactly
    N, h = 12, 0.25
    H0 = lattice_laplacian(TRI, h, N)
    ginv_t = np.linalg.inv(TRI.generator.T)
    n = np.indices((N, N)).reshape(2, -1).T
    for k in ((1, 0), (2, 5), (7, 3)):
        sigma = np.array(k) / N
        wave = np.exp(2j * np.pi * (n @ sigma))
        xi = ginv_t @ sigma / h
        want = float(eval_p0h(TRI, h, xi))
        got = H0 @ wave
        assert np.allclose(got, want * wave, atol=1e-9 * max(want, 1.0))


def test_free_eigenvalues_are_symbol_samples():
    N, h = 32, 0.125
    H = assemble_Hh(SQ1, potential("zero"), h, N)
    ev, _ = lowest_eigenpairs(H, 5)
    xi = np.arange(N).reshape(-1, 1) / (N * h)
    samples = np.sort(eval_p0h(SQ1, h, xi))
    assert np.allclose(ev, samples[:5], atol=1e-8)


def test_symmetry_and_lower_bound():
    H = assemble_Hh(SQ1, OSC, 0.25, 32)
    assert abs(H.matrix - H.matrix.T).max() == 0
    ev, _ = lowest_eigenpairs(H, 1)
    vals = OSC.values(centered_sites(SQ1, 0.25, 32))
    assert ev[0] >= vals.min() - 1e-9


def test_unbounded_below_potential_rejected():
    bad = PotentialSpec("inverted", "-r2", 1.0, 3.0, "none")
    with pytest.raises(ValueError, match="lower-bound"):
        assemble_Hh(SQ1, bad, 0.25, 32)


def test_odd_torus_rejected():
    with pytest.raises(ValueError, match="even"):
        assemble_Hh(SQ1, OSC, 0.25, 31)


def test_oscillator_levels_d1():
    # fine-grid oracle: -u'' + x^2 u has eigenvalues 1, 3, 5, ...
    fine = assemble_Hh(SQ1, OSC, 2.0**-4 / 8, 12 * 2**4 * 8)
    ev, _ = lowest_eigenpairs(fine, 5)
    assert np.abs(ev - np.array([1, 3, 5, 7, 9])).max() < 0.02


def test_oscillator_hausdorff_shrinks_d1():
    d_coarse = spectra_hausdorff(SQ1, OSC, 2.0**-2, 12 * 2**2, k=5)
    d_fine = spectra_hausdorff(SQ1, OSC, 2.0**-4, 12 * 2**4, k=5)
    assert d_fine < d_coarse
    assert d_fine <= 0.05


def test_triangular_oscillator_ground_state():
    # limit operator is -(3/2) Laplacian + |x|^2 with ground energy sqrt(6)
    fine = assemble_Hh(TRI, OSC, 2.0**-2 / 8, 6 * 2**2 * 8)
    ev, _ = lowest_eigenpairs(fine, 1)
    assert abs(ev[0] - np.sqrt(6.0)) < 0.02


def test_triangular_oscillator_hausdorff_shrinks():
    d1 = spectra_hausdorff(TRI, OSC, 2.0**-1, 10 * 2, k=3)
    d2 = spectra_hausdorff(TRI, OSC, 2.0**-2, 10 * 4, k=3)
    assert d2 < d1


def test_k_too_large_for_truncation():
    with pytest.raises(ValueError, match="too large"):
        spectra_hausdorff(SQ1, OSC, 0.25, 32, k=25)


def test_core_mass_guard():
    well = potential("gaussian_well")
    with pytest.raises(ValueError, match="core"):
        spectra_hausdorff(SQ1, well, 0.25, 16, k=1)


def test_free_spectra_interval_endpoints():
    # V = 0: spectra restricted to a momentum window are intervals whose
    # endpoint gap comes straight from the symbols
    xi = np.linspace(-2, 2, 401).reshape(-1, 1)
    top = eval_p0(SQ1, xi).max()
    gaps = []
    for h in (0.5, 0.25, 0.125):
        gaps.append(abs(eval_p0h(SQ1, h, xi).max() - top))
    assert gaps[2] < gaps[1] < gaps[0]


def test_hausdorff_distance_basics():
    assert hausdorff_distance([1, 2, 3], [1, 2, 3]) == 0
    assert hausdorff_distance([0.0], [3.0]) == 3.0
    assert hausdorff_distance([0, 10], [1, 2]) == 8.0
    assert hausdorff_distance([1, 2], [0, 10]) == 8.0
    with pytest.raises(ValueError, match="nonempty"):
        hausdorff_distance([], [1.0])


def test_qualitative_free_case_recovers_rate():
    rep = resolvent_convergence_qualitative(SQ1, potential("zero"), mu=1j,
                                            h_exponents=range(3, 8), box_cells=1)
    assert rep.slope >= 1.9
    assert rep.r_squared >= 0.99


def test_qualitative_oscillator_monotone():
    rep = resolvent_convergence_qualitative(SQ1, OSC, mu=1j,
                                            h_exponents=range(2, 7), box_cells=8)
    assert all(a > b for a, b in zip(rep.norms, rep.norms[1:]))
    assert rep.slope > 0         # recorded, not asserted beyond decay
    doc = rep.to_document()
    assert doc["grid_config"]["potential"] == "oscillator"


def test_qualitative_requires_nonreal_mu():
    with pytest.raises(ValueError, match="non-real"):
        resolvent_convergence_qualitative(SQ1, OSC, mu=3.0)


def test_commutator_defect_vanishes():
    vals = [commutator_defect(SQ1, OSC, 2.0**-e, 8 * 2**e) for e in (2, 3, 4)]
    assert vals[2] < vals[1] < vals[0]
    assert vals[2] < 1e-3


def test_potential_relatively_bounded_uniformly():
    # sup ||V u|| / (||H u|| + ||u||) stable within x2 across the sweep
    rng = np.random.default_rng(1)
    sups = []
    for e in (2, 3, 4, 5):
        h, N = 2.0**-e, 8 * 2**e
        H = assemble_Hh(SQ1, OSC, h, N)
        x = centered_sites(SQ1, h, N)[:, 0]
        V = OSC.values(centered_sites(SQ1, h, N))
        probes = [np.exp(2j * np.pi * m * np.arange(N) / N) for m in range(4)]
        probes.append(np.exp(-0.5 * x**2) + 0j)
        probes += [rng.normal(size=N) + 1j * rng.normal(size=N) for _ in range(20)]
        sup = 0.0
        for u in probes:
            u = u / np.linalg.norm(u)
            sup = max(sup, np.linalg.norm(V * u) / (np.linalg.norm(H.apply(u)) + 1))
        sups.append(sup)
    assert max(sups) < 1.5
    assert max(sups) / min(sups) < 2.0


def test_spectra_hausdorff_deterministic():
    a = spectra_hausdorff(SQ1, OSC, 2.0**-3, 12 * 2**3, k=5)
    b = spectra_hausdorff(SQ1, OSC, 2.0**-3, 12 * 2**3, k=5)
    assert a == b


def test_qualitative_report_deterministic():
    kw = dict(mu=0.3 + 1j, h_exponents=range(2, 5), box_cells=4)
    a = resolvent_convergence_qualitative(SQ1, OSC, **kw)
    b = resolvent_convergence_qualitative(SQ1, OSC, **kw)
    assert np.array_equal(a.norms, b.norms)
