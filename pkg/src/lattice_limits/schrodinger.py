"""Lattice Hamiltonians H_h = H_{0,h} + V_h with confining potentials.

Potentials live in a small registry of named formulas.  Unbounded ones such
as the oscillator are periodized by the torus box; spectral comparisons are
then only trusted for eigenfunctions that keep 99% of their mass away from
the seam, which is checked, not assumed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

from .convergence import ConvergenceReport, _check_mu, fit_rate
from .elliptic import TorusOperator, _eval_formula, _power_norm, _ResidualSolve
from .embedding import build_cutoff, torus_J_pair
from .lattice import LatticeSpec


@dataclass(frozen=True)
class PotentialSpec:
    """A named potential with its lower-bound shift M and the comparability
    constant c1 over unit balls: c1^{-1}(V(x)+M) <= V(y)+M <= c1(V(x)+M)."""

    name: str
    expr: str
    M: float
    c1: float
    continuity: str

    def values(self, x: np.ndarray) -> np.ndarray:
        return _eval_formula(self.expr, np.atleast_2d(np.asarray(x, dtype=float)), 1.0)


_POTENTIALS = {
    "zero": PotentialSpec("zero", "0.0", 1.0, 1.0, "constant"),
    "oscillator": PotentialSpec("oscillator", "r2", 1.0, 3.0, "locally_lipschitz"),
    "gaussian_well": PotentialSpec("gaussian_well", "-2.0*exp(-r2)", 3.0, 3.0,
                                   "lipschitz"),
}

POTENTIAL_NAMES = tuple(sorted(_POTENTIALS))


def potential(name: str) -> PotentialSpec:
    try:
        return _POTENTIALS[name]
    except KeyError:
        raise ValueError(
            f"unknown potential {name!r}; available: {', '.join(POTENTIAL_NAMES)}")


def centered_sites(lattice: LatticeSpec, h: float, N: int) -> np.ndarray:
    """Torus sites with the origin in the middle of the box, (N^d, d)."""
    d = lattice.dim
    coords = np.indices((N,) * d).reshape(d, -1).T - N // 2
    return lattice.sites(coords, h)


def _edge_shift(N: int, d: int, coords: np.ndarray) -> sp.csr_matrix:
    """(S u)(n) = u(n + coords) on the index torus."""
    idx = np.arange(N**d).reshape((N,) * d)
    cols = np.roll(idx, tuple(-c for c in coords), axis=tuple(range(d))).ravel()
    return sp.csr_matrix((np.ones(N**d), (np.arange(N**d), cols)),
                         shape=(N**d, N**d))


def lattice_laplacian(lattice: LatticeSpec, h: float, N: int) -> sp.csr_matrix:
    size = N**lattice.dim
    acc = sp.csr_matrix((size, size))
    eye = sp.identity(size, format="csr")
    for f, mu in zip(lattice.edge_coords, lattice.edge_weights):
        S = _edge_shift(N, lattice.dim, f)
        acc = acc + mu * (2 * eye - S - S.T)
    return (acc / h**2).tocsr()


def assemble_Hh(lattice: LatticeSpec, V: PotentialSpec, h: float,
                N: int) -> TorusOperator:
    """H_h = H_{0,h} + V on the N-cell torus, V sampled at centered sites."""
    if N % 2:
        raise ValueError("N must be even so the box is centered on the origin")
    vals = V.values(centered_sites(lattice, h, N))
    if (vals + V.M).min() < 1.0 - 1e-9:
        raise ValueError(
            f"potential {V.name!r} falls below 1 - M on the sample; "
            "the lower-bound assumption fails")
    H = lattice_laplacian(lattice, h, N) + sp.diags(vals)
    return TorusOperator(lattice.dim, h, N, "Hh", H.tocsr(),
                         lattice=lattice, potential=V)


def lowest_eigenpairs(op: TorusOperator, k: int):
    """k smallest eigenvalues and vectors, deterministic start vector."""
    n = op.matrix.shape[0]
    if k >= n - 1:
        raise ValueError("k must be small against the torus size")
    v0 = np.cos(np.linspace(0.0, 1.0, n)) + 1e-3
    sigma = min(0.0, op.matrix.diagonal().min()) - 1.0
    vals, vecs = eigsh(op.matrix, k=k, sigma=sigma, which="LM", v0=v0)
    order = np.argsort(vals)
    return vals[order], vecs[:, order]


def hausdorff_distance(a, b) -> float:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("Hausdorff distance needs nonempty sets")
    gaps = np.abs(a[:, None] - b[None, :])
    return float(max(gaps.min(axis=1).max(), gaps.min(axis=0).max()))


def _is_confining(vals: np.ndarray) -> bool:
    return vals.max() - vals.min() > 1.0


def _core_mass(vecs: np.ndarray, lattice: LatticeSpec, h: float, N: int,
               frac: float = 0.75) -> float:
    """Smallest in-core probability mass among the eigenvectors; the core is
    the central frac-cube of the index box."""
    d = lattice.dim
    coords = np.indices((N,) * d).reshape(d, -1).T - N // 2
    core = (np.abs(coords) <= frac * (N // 2)).all(axis=1)
    dens = np.abs(vecs) ** 2
    return float((dens[core].sum(axis=0) / dens.sum(axis=0)).min())


def spectra_hausdorff(lattice: LatticeSpec, V: PotentialSpec, h: float, N: int,
                      k: int, ref_factor: int = 8) -> float:
    """d_H between the k lowest eigenvalues at spacing h and at h/ref_factor.

    For confining potentials the k-th eigenvalue must stay below the
    potential's value at the box seam, and every compared eigenfunction must
    hold >= 99% of its mass in the central three quarters of the box.
    """
    coarse = assemble_Hh(lattice, V, h, N)
    fine = assemble_Hh(lattice, V, h / ref_factor, N * ref_factor)
    ev_c, vec_c = lowest_eigenpairs(coarse, k)
    ev_f, vec_f = lowest_eigenpairs(fine, k)
    vals = V.values(centered_sites(lattice, h, N))
    if _is_confining(vals):
        d = lattice.dim
        coords = np.indices((N,) * d).reshape(d, -1).T - N // 2
        seam = (np.abs(coords) == N // 2).any(axis=1)
        threshold = vals[seam].min()
        if ev_c[-1] >= threshold:
            raise ValueError(
                f"k={k} too large: eigenvalue {ev_c[-1]:.3g} reaches the box "
                f"seam potential {threshold:.3g}, truncation is unreliable")
        for op, vecs in ((coarse, vec_c), (fine, vec_f)):
            mass = _core_mass(vecs, lattice, op.h, op.N)
            if mass < 0.99:
                raise ValueError(
                    f"eigenfunction keeps only {mass:.4f} of its mass in the "
                    "core; enlarge the box")
    return hausdorff_distance(ev_c, ev_f)


def resolvent_convergence_qualitative(lattice: LatticeSpec, V: PotentialSpec,
                                      mu: complex = 1j,
                                      h_exponents=range(2, 7),
                                      box_cells: int = 8, ref_factor: int = 8,
                                      power_iters: int = 50, tol: float = 1e-6,
                                      seed: int = 0) -> ConvergenceReport:
    """Norms of R_ref - J_h (H_h - mu)^{-1} J_h^* over an h sweep.

    Qualitative: callers may check monotone decrease, but no rate is built
    into the fit beyond what the data shows.
    """
    mu = _check_mu(mu)
    d = lattice.dim
    profile = build_cutoff(lattice)
    pairs = []
    for e in h_exponents:
        h = 2.0**-e
        N = box_cells * 2**e
        Nf = N * ref_factor
        coarse = assemble_Hh(lattice, V, h, N).matrix
        fine = assemble_Hh(lattice, V, h / ref_factor, Nf).matrix
        solve_c = _ResidualSolve(coarse - mu * sp.identity(N**d))
        solve_f = _ResidualSolve(fine - mu * sp.identity(Nf**d))
        solve_c_adj = _ResidualSolve(coarse - np.conj(mu) * sp.identity(N**d))
        solve_f_adj = _ResidualSolve(fine - np.conj(mu) * sp.identity(Nf**d))
        apply_J, apply_J_star = torus_J_pair(profile, N, ref_factor)
        shape_f = (Nf,) * d

        def D(u, sc=solve_c, sf=solve_f, J=apply_J, Js=apply_J_star, n=N):
            direct = sf(u.ravel()).reshape(shape_f)
            return direct - J(sc(Js(u).ravel()).reshape((n,) * d))

        def Dstar(u, sc=solve_c_adj, sf=solve_f_adj, J=apply_J,
                  Js=apply_J_star, n=N):
            direct = sf(u.ravel()).reshape(shape_f)
            return direct - J(sc(Js(u).ravel()).reshape((n,) * d))

        pairs.append((h, _power_norm(D, Dstar, shape_f, power_iters, tol, seed)))
    return fit_rate(pairs, grid_config={
        "quantity": "hamiltonian_resolvent_difference",
        "lattice": lattice.name, "potential": V.name,
        "mu": [mu.real, mu.imag], "box_cells": box_cells,
        "ref_factor": ref_factor, "power_iters": power_iters, "seed": seed,
    })


def commutator_defect(lattice: LatticeSpec, V: PotentialSpec, h: float, N: int,
                      refine: int = 8, modes_per_axis: int = 3,
                      trials: int = 8, seed: int = 0) -> float:
    """sup over band-limited fields of ||G J* u - J* G u|| / ||u||,
    G = (V + M)^{-1} as multiplication on each grid."""
    d = lattice.dim
    profile = build_cutoff(lattice)
    _, apply_J_star = torus_J_pair(profile, N, refine)
    Nf = N * refine
    g_c = 1.0 / (V.values(centered_sites(lattice, h, N)).reshape((N,) * d) + V.M)
    g_f = 1.0 / (V.values(centered_sites(lattice, h / refine, Nf)).reshape((Nf,) * d) + V.M)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        spec = np.zeros((Nf,) * d, dtype=complex)
        block = (slice(0, modes_per_axis + 1),) * d
        spec[block] = rng.normal(size=(modes_per_axis + 1,) * d) \
            + 1j * rng.normal(size=(modes_per_axis + 1,) * d)
        u = np.fft.ifftn(spec)
        defect = np.linalg.norm(g_c * apply_J_star(u) - apply_J_star(g_f * u))
        worst = max(worst, defect / np.linalg.norm(u))
    return worst
