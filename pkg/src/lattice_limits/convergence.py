"""Exact operator norms for the free-resolvent comparison, fiber by fiber.

J_h (H_{0,h} - mu)^{-1} J_h^* - (H_0 - mu)^{-1} commutes with lattice
translations, so it is a direct integral over quasimomenta xi in the scaled
zone h^{-1} Omega.  Each fiber is a small matrix over the finitely many dual
shifts that the cutoff support can reach (the band set), and the operator
norm is the supremum of fiber spectral norms.

Everything is evaluated at sigma = h xi in the unscaled zone: band vectors
and the continuum symbol values on bands are then independent of h, and the
two resolvents only see h through the h^{-2} prefactor of the symbols.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embedding import CutoffProfile
from .lattice import BrillouinZone, LatticeSpec, brillouin_zone, dual
from .symbols import SupResult, eval_p0, eval_p0h, sup_over_zone

_DEFAULT_ZONE_RES = {1: 512, 2: 96, 3: 24}


def _check_mu(mu: complex) -> complex:
    mu = complex(mu)
    if mu.imag == 0:
        raise ValueError("mu must be non-real: the resolvents are compared off the spectrum")
    return mu


@dataclass(frozen=True)
class FiberBlock:
    """The difference operator restricted to the bands xi + eta/h."""

    xi: np.ndarray
    matrix: np.ndarray

    def norm(self) -> float:
        return float(np.linalg.norm(self.matrix, 2))


def _band_data(profile: CutoffProfile, sigma: np.ndarray):
    """(v, p0_bands, q) at unscaled zone points sigma, shapes (..., B) and (...)."""
    lat = profile.lattice
    v = profile.band_values(sigma)
    pts = profile.band_points(sigma)
    p0b = eval_p0(lat, pts)
    q = eval_p0h(lat, 1.0, sigma)
    return v, p0b, q


def _blocks_at(profile: CutoffProfile, h: float, mu: complex, sigma: np.ndarray) -> np.ndarray:
    """Fiber matrices at sigma = h xi; shape (..., B, B)."""
    v, p0b, q = _band_data(profile, sigma)
    g_lat = 1.0 / (q / h**2 - mu)
    g_cont = 1.0 / (p0b / h**2 - mu)
    outer = v[..., :, None] * v[..., None, :] / profile.cell_volume
    blocks = g_lat[..., None, None] * outer
    idx = np.arange(v.shape[-1])
    blocks[..., idx, idx] -= g_cont
    return blocks


def difference_fiber(profile: CutoffProfile, lattice: LatticeSpec, h: float,
                     mu: complex, xi: np.ndarray) -> FiberBlock:
    """B(xi) = g_h(xi) (v v^T)/w0 - diag(g_0(xi + eta/h)) over the band set."""
    mu = _check_mu(mu)
    if lattice is not profile.lattice and lattice.name != profile.lattice.name:
        raise ValueError("profile was built for a different lattice")
    xi = np.asarray(xi, dtype=float)
    block = _blocks_at(profile, h, mu, h * xi[None, :])[0]
    return FiberBlock(xi=xi, matrix=block)


def _batched_spectral_norm(blocks: np.ndarray) -> np.ndarray:
    return np.linalg.svd(blocks, compute_uv=False)[..., 0]


def resolvent_difference_norm(profile: CutoffProfile, lattice: LatticeSpec,
                              h: float, mu: complex, zone_res: int | None = None,
                              refine: int = 2) -> SupResult:
    """sup over the zone grid (with local refinement) of fiber spectral norms."""
    mu = _check_mu(mu)
    zone = _default_zone(profile, zone_res)

    def fn(sigma):
        return _batched_spectral_norm(_blocks_at(profile, h, mu, sigma))

    return sup_over_zone(fn, zone, refine=refine)


def one_minus_JJ_norm(profile: CutoffProfile, lattice: LatticeSpec, h: float,
                      mu: complex, zone_res: int | None = None,
                      refine: int = 2) -> SupResult:
    """sup over xi of the norm of (I - band projector) diag(g_0(xi + eta/h))."""
    mu = _check_mu(mu)
    zone = _default_zone(profile, zone_res)
    w0 = profile.cell_volume

    def fn(sigma):
        v, p0b, _ = _band_data(profile, sigma)
        g_cont = 1.0 / (p0b / h**2 - mu)
        blocks = -(v[..., :, None] * v[..., None, :] / w0) * g_cont[..., None, :]
        idx = np.arange(v.shape[-1])
        blocks[..., idx, idx] += g_cont
        return _batched_spectral_norm(blocks)

    return sup_over_zone(fn, zone, refine=refine)


def adjoint_difference_norm(profile: CutoffProfile, lattice: LatticeSpec, h: float,
                            mu: complex, zone_res: int | None = None,
                            refine: int = 2) -> SupResult:
    """sup over xi of |w0^{-1} sum_eta phi^2 g_0 - g_h|.

    This is the fiber of J_h^*(H_0-mu)^{-1}J_h - (H_{0,h}-mu)^{-1}, a scalar
    per quasimomentum because the lattice side is one-dimensional per fiber.
    """
    mu = _check_mu(mu)
    zone = _default_zone(profile, zone_res)
    w0 = profile.cell_volume

    def fn(sigma):
        v, p0b, q = _band_data(profile, sigma)
        g_lat = 1.0 / (q / h**2 - mu)
        g_cont = 1.0 / (p0b / h**2 - mu)
        return np.abs((v**2 * g_cont).sum(axis=-1) / w0 - g_lat)

    return sup_over_zone(fn, zone, refine=refine)


def band_tail_bound(profile: CutoffProfile, h: float, mu: complex,
                    shell_radius: int = 3) -> float:
    """Diagnostic: largest |g_0| on dual shifts outside the band set.

    The fiber matrices only carry the band set; everything further out is a
    pure continuum diagonal whose size this bound reports.
    """
    mu = _check_mu(mu)
    lat = profile.lattice
    dl = dual(lat)
    band = set(profile.band_set)
    ring = [m for m in map(tuple, dl.shell(shell_radius).tolist()) if tuple(m) not in band]
    if not ring:
        return 0.0
    zone = _default_zone(profile, None)
    pts = zone.points[:, None, :] + np.array(ring, dtype=float) @ dl.generator.T
    g = 1.0 / (eval_p0(lat, pts) / h**2 - mu)
    return float(np.abs(g).max())


def _default_zone(profile: CutoffProfile, zone_res: int | None) -> BrillouinZone:
    if zone_res is None:
        zone_res = _DEFAULT_ZONE_RES[profile.dim]
    return brillouin_zone(dual(profile.lattice), points_per_axis=int(zone_res))


# -- rate fitting and reports -------------------------------------------------


@dataclass
class ConvergenceReport:
    h_values: list
    norms: list
    slope: float
    intercept: float
    r_squared: float
    grid_config: dict = field(default_factory=dict)

    def to_document(self) -> dict:
        return {
            "h_values": [float(h) for h in self.h_values],
            "norms": [float(v) for v in self.norms],
            "slope": float(self.slope),
            "intercept": float(self.intercept),
            "r_squared": float(self.r_squared),
            "grid_config": self.grid_config,
        }


def fit_rate(pairs, grid_config: dict | None = None) -> ConvergenceReport:
    """Least-squares log-log fit of (h, norm) pairs."""
    pairs = list(pairs)
    if len(pairs) < 3:
        raise ValueError("need at least 3 (h, norm) pairs to fit a rate")
    h = np.array([p[0] for p in pairs], dtype=float)
    vals = np.array([p[1] for p in pairs], dtype=float)
    if np.any(vals <= 0):
        raise ValueError("norms must be positive for a log-log fit")
    if np.any(np.diff(h) >= 0):
        raise ValueError("h values must be strictly decreasing")
    x, y = np.log(h), np.log(vals)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = ((y - y.mean()) ** 2).sum()
    r2 = 1.0 - float((resid**2).sum() / ss_tot) if ss_tot > 0 else 1.0
    return ConvergenceReport(
        h_values=h.tolist(),
        norms=vals.tolist(),
        slope=float(slope),
        intercept=float(intercept),
        r_squared=r2,
        grid_config=dict(grid_config or {}),
    )


def free_convergence_sweep(profile: CutoffProfile, mu: complex = 1j,
                           h_exponents=range(2, 9), zone_res: int | None = None,
                           refine: int = 2, quantity: str = "difference") -> ConvergenceReport:
    """Sweep h = 2^{-e} and fit the decay rate of the chosen norm."""
    mu = _check_mu(mu)
    fns = {
        "difference": resolvent_difference_norm,
        "one_minus_JJ": one_minus_JJ_norm,
        "adjoint": adjoint_difference_norm,
    }
    fn = fns[quantity]
    pairs = []
    for e in h_exponents:
        h = 2.0**-e
        res = fn(profile, profile.lattice, h, mu, zone_res=zone_res, refine=refine)
        pairs.append((h, res.value))
    config = {
        "lattice": profile.lattice.name,
        "eps": profile.eps,
        "grid_res": profile.grid_res,
        "zone_res": int(zone_res) if zone_res is not None else _DEFAULT_ZONE_RES[profile.dim],
        "mu": [mu.real, mu.imag],
        "quantity": quantity,
        "band_count": len(profile.band_set),
    }
    return fit_rate(pairs, grid_config=config)
