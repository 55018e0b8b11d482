"""Honeycomb lattice operators and their O(h^2) path to -(3/4) Laplace.

The honeycomb sites are two of the three translation classes of the
triangular lattice generated by e1, e2; the third class is filled by the
six-neighbor average (the interpolation operator Theta).  All operators
are Gamma-periodic, so everything reduces to 3x3 / 2x2 / 3x2 fiber
matrices over the zone of the coarse dual lattice.

Component spaces carry the inner product <u, v> = (1/n) sum conj(u) v, so
the adjoint of Theta picks up a factor 2/3.  Fiber phases always appear as
phi_f(xi) = exp(2 pi i h f . xi).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .convergence import ConvergenceReport, _check_mu, fit_rate
from .embedding import CutoffProfile
from .lattice import BrillouinZone, LatticeSpec, brillouin_zone, dual
from .symbols import sup_over_zone

SQ3 = np.sqrt(3.0)


def _freeze(a):
    a = np.asarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class HexGeometry:
    """Fixed vectors of the honeycomb construction at mesh width h."""

    h: float
    e1: np.ndarray = field(default_factory=lambda: _freeze([0.5, SQ3 / 2]))
    e2: np.ndarray = field(default_factory=lambda: _freeze([0.5, -SQ3 / 2]))
    e3: np.ndarray = field(default_factory=lambda: _freeze([-1.0, 0.0]))
    f1: np.ndarray = field(default_factory=lambda: _freeze([1.5, SQ3 / 2]))
    f2: np.ndarray = field(default_factory=lambda: _freeze([1.5, -SQ3 / 2]))
    f1p: np.ndarray = field(default_factory=lambda: _freeze([1 / 3, 1 / SQ3]))
    f2p: np.ndarray = field(default_factory=lambda: _freeze([1 / 3, -1 / SQ3]))
    e1p: np.ndarray = field(default_factory=lambda: _freeze([1.0, 1 / SQ3]))
    e2p: np.ndarray = field(default_factory=lambda: _freeze([1.0, -1 / SQ3]))

    @property
    def w0(self) -> float:
        return SQ3 / 2

    def triangular_lattice(self) -> LatticeSpec:
        """The underlying triangular lattice in this frame, unit edges."""
        return LatticeSpec(
            name="triangular_hex_frame",
            dim=2,
            generator=np.column_stack([self.e1, self.e2]),
            edge_coords=np.array([[1, 0], [0, 1], [-1, -1]]),
            edge_weights=np.ones(3),
        )

    def coarse_lattice(self) -> LatticeSpec:
        """The index-3 sublattice spanned by f1, f2 (period of the fibers)."""
        return LatticeSpec(
            name="hex_coarse",
            dim=2,
            generator=np.column_stack([self.f1, self.f2]),
            edge_coords=np.array([[1, 0], [0, 1]]),
            edge_weights=np.ones(2),
        )

    def zone(self, points_per_axis: int) -> BrillouinZone:
        return brillouin_zone(dual(self.coarse_lattice()), points_per_axis)

    def dirac_momenta(self) -> np.ndarray:
        """The two zone corners where alpha vanishes, scaled by 1/h."""
        K = (self.f1p - self.f2p) / 3.0
        return np.array([K, -K]) / self.h


def hex_geometry(h: float = 1.0) -> HexGeometry:
    geom = HexGeometry(h=float(h))
    # e', f' are exact rational/sqrt(3) data; keep them honest
    assert np.allclose(geom.f1, geom.e1 - geom.e3, atol=1e-15)
    assert np.allclose(geom.e1p, 2 * geom.f1p + geom.f2p, atol=1e-15)
    return geom


@dataclass(frozen=True)
class HexFiber:
    xi: np.ndarray
    Htr: np.ndarray        # 3x3
    Hhex: np.ndarray       # 2x2
    Theta: np.ndarray      # 3x2
    ThetaStar: np.ndarray  # 2x3


def _phases(geom: HexGeometry, sigma: np.ndarray):
    """phi_{f1}, phi_{f2} and friends at sigma = h xi; sigma shape (..., 2)."""
    p1 = np.exp(2j * np.pi * (sigma @ geom.f1))
    p2 = np.exp(2j * np.pi * (sigma @ geom.f2))
    return p1, p2


def _tr_matrix(geom, sigma):
    p1, p2 = _phases(geom, sigma)
    a = -(1 + p1 + p2)                 # class 1 -> 2 coupling
    b = -(1 + p2 + p2 * np.conj(p1))   # class 1 -> 3
    c = -(1 + np.conj(p1) + p2 * np.conj(p1))  # class 2 -> 3
    shape = np.shape(sigma)[:-1]
    M = np.zeros(shape + (3, 3), dtype=complex)
    M[..., 0, 0] = M[..., 1, 1] = M[..., 2, 2] = 6.0
    M[..., 0, 1] = a
    M[..., 1, 0] = np.conj(a)
    M[..., 0, 2] = b
    M[..., 2, 0] = np.conj(b)
    M[..., 1, 2] = c
    M[..., 2, 1] = np.conj(c)
    return M


def _hex_matrix(geom, sigma):
    p1, p2 = _phases(geom, sigma)
    a = -(1 + p1 + p2)
    shape = np.shape(sigma)[:-1]
    M = np.zeros(shape + (2, 2), dtype=complex)
    M[..., 0, 0] = M[..., 1, 1] = 3.0
    M[..., 0, 1] = a
    M[..., 1, 0] = np.conj(a)
    return M


def _theta_matrix(geom, sigma):
    p1, p2 = _phases(geom, sigma)
    shape = np.shape(sigma)[:-1]
    T = np.zeros(shape + (3, 2), dtype=complex)
    T[..., 0, 0] = 1.0
    T[..., 1, 1] = 1.0
    T[..., 2, 0] = (1 + np.conj(p2) + p1 * np.conj(p2)) / 6.0
    T[..., 2, 1] = (1 + p1 + p1 * np.conj(p2)) / 6.0
    return T


def hex_fiber(geom: HexGeometry, xi: np.ndarray) -> HexFiber:
    """All fiber matrices at one quasimomentum xi in the coarse zone."""
    xi = np.asarray(xi, dtype=float)
    sigma = geom.h * xi
    Htr = _tr_matrix(geom, sigma) / geom.h**2
    Hhex = _hex_matrix(geom, sigma) / geom.h**2
    Theta = _theta_matrix(geom, sigma)
    return HexFiber(xi=xi, Htr=Htr, Hhex=Hhex, Theta=Theta,
                    ThetaStar=(2.0 / 3.0) * Theta.conj().swapaxes(-1, -2))


def alpha(geom: HexGeometry, xi: np.ndarray) -> np.ndarray:
    p1, p2 = _phases(geom, geom.h * np.asarray(xi, dtype=float))
    return 1 + p1 + p2


def hex_eigenpairs(fiber: HexFiber) -> dict:
    """Closed-form spectrum of the honeycomb fiber: E = h^{-2}(3 +- |alpha|).

    Away from the Dirac points the eigenvectors are (1, -+ conj(alpha)/|alpha|),
    already normalized for the weighted two-component inner product.
    """
    a = -fiber.Hhex[..., 0, 1]                  # alpha / h^2
    diag = fiber.Hhex[..., 0, 0].real           # 3 / h^2
    mod = np.abs(a)
    if np.any(mod * (3.0 / diag) < 1e-12):
        raise ValueError("Dirac point: |alpha| < 1e-12, eigenvector formula undefined")
    w_minus = np.stack([np.ones_like(a), np.conj(a) / mod], axis=-1)
    w_plus = np.stack([np.ones_like(a), -np.conj(a) / mod], axis=-1)
    return {"E_minus": diag - mod, "E_plus": diag + mod,
            "w_minus": w_minus, "w_plus": w_plus}


def tr_energy(geom: HexGeometry, xi: np.ndarray) -> np.ndarray:
    """Scalar triangular symbol h^{-2}(6 - 2 sum_j cos(2 pi h e_j . xi))."""
    sigma = geom.h * np.asarray(xi, dtype=float)
    acc = np.zeros(np.shape(sigma)[:-1])
    for e in (geom.e1, geom.e2, geom.e3):
        acc += np.cos(2 * np.pi * (sigma @ e))
    return (6.0 - 2.0 * acc) / geom.h**2


def _w_from_phases(geom, sigma):
    """(1, phi_{e3}, phi_{-e2}) at sigma = h xi."""
    pe3 = np.exp(2j * np.pi * (sigma @ geom.e3))
    pme2 = np.exp(-2j * np.pi * (sigma @ geom.e2))
    return np.stack([np.ones_like(pe3), pe3, pme2], axis=-1)


def tr_eigenpairs(geom: HexGeometry, xi: np.ndarray) -> dict:
    """Three eigenpairs of the 3x3 triangular fiber.

    The eigenvalues are the scalar symbol at xi and at xi shifted by
    +-f1'/h; the eigenvectors are the phase vectors at those arguments,
    orthonormal in the weighted C^3 inner product.
    """
    xi = np.asarray(xi, dtype=float)
    shift = geom.f1p / geom.h
    out = {}
    for tag, arg in (("0", xi), ("plus", xi + shift), ("minus", xi - shift)):
        out["E_" + tag] = tr_energy(geom, arg)
        out["w_" + tag] = _w_from_phases(geom, geom.h * arg)
    return out


def weighted_ip(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """<u, v> = (1/n) sum conj(u) v along the last axis."""
    u, v = np.asarray(u), np.asarray(v)
    return (np.conj(u) * v).sum(axis=-1) / u.shape[-1]


def weighted_norm(M: np.ndarray, n_in: int, n_out: int) -> np.ndarray:
    """Operator norm of a matrix between weighted C^n spaces."""
    s = np.linalg.svd(M, compute_uv=False)[..., 0]
    return np.sqrt(n_in / n_out) * s


# -- position space on a periodic coarse patch --------------------------------
#
# fields are indexed u[c, a, b] with c the class and (a, b) coordinates of
# gamma = a f1 + b f2 on the periodic patch; class offsets are 0, e3, -e2.


def _require_patch(u, components):
    u = np.asarray(u)
    if u.ndim != 3 or u.shape[0] != components:
        raise ValueError(f"expected ({components}, n1, n2) patch data")
    if min(u.shape[1:]) < 2:
        raise ValueError("patch too small for the 6-neighbor stencil")
    return u


def theta_apply(geom: HexGeometry, u: np.ndarray) -> np.ndarray:
    """Fill the third class by the 6-neighbor average, keep the other two."""
    u = _require_patch(u, 2)
    u0, u1 = u[0], u[1]

    def at(w, da, db):  # value at gamma + da f1 + db f2
        return np.roll(w, shift=(-da, -db), axis=(0, 1))

    third = (u0 + at(u0, 1, -1) + at(u0, 0, -1)
             + u1 + at(u1, 1, -1) + at(u1, 1, 0)) / 6.0
    return np.stack([u0, u1, third])


def tr_apply(geom: HexGeometry, w: np.ndarray) -> np.ndarray:
    """Six-neighbor Laplacian of a three-class field on the periodic patch."""
    w = _require_patch(w, 3)
    w0, w1, w2 = w[0], w[1], w[2]

    def at(f, da, db):
        return np.roll(f, shift=(-da, -db), axis=(0, 1))

    out0 = 6 * w0 - (w1 + at(w1, 1, 0) + at(w1, 0, 1)) \
        - (w2 + at(w2, -1, 1) + at(w2, 0, 1))
    out1 = 6 * w1 - (w2 + at(w2, -1, 1) + at(w2, -1, 0)) \
        - (w0 + at(w0, -1, 0) + at(w0, 0, -1))
    out2 = 6 * w2 - (w0 + at(w0, 1, -1) + at(w0, 0, -1)) \
        - (w1 + at(w1, 1, -1) + at(w1, 1, 0))
    return np.stack([out0, out1, out2]) / geom.h**2


def hex_apply(geom: HexGeometry, u: np.ndarray) -> np.ndarray:
    """Three-neighbor honeycomb Laplacian on the periodic patch."""
    u = _require_patch(u, 2)
    u0, u1 = u[0], u[1]

    def at(f, da, db):
        return np.roll(f, shift=(-da, -db), axis=(0, 1))

    out0 = 3 * u0 - (u1 + at(u1, 1, 0) + at(u1, 0, 1))
    out1 = 3 * u1 - (u0 + at(u0, -1, 0) + at(u0, 0, -1))
    return np.stack([out0, out1]) / geom.h**2


def hex_field_norm(u: np.ndarray, h: float) -> float:
    """l2 norm with the class-averaged site weight 3 w0 h^2 / n."""
    u = np.asarray(u)
    n = u.shape[0]
    w = 3.0 * (SQ3 / 2) * h**2 / n
    return float(np.sqrt(w * (np.abs(u) ** 2).sum()))


# -- the convergence chain -----------------------------------------------------


@dataclass
class HexChainReport:
    projector: ConvergenceReport      # (1 - Theta Theta*) resolvent
    intertwine: ConvergenceReport     # Theta* R_tr - R_hex Theta*
    combined: ConvergenceReport       # full difference against -(3/4) Laplace

    def to_document(self) -> dict:
        return {
            "projector": self.projector.to_document(),
            "intertwine": self.intertwine.to_document(),
            "combined": self.combined.to_document(),
        }


def _chain_band_layout(profile: CutoffProfile, geom: HexGeometry):
    """Bands beta = kappa + dual shift for the combined fiber blocks."""
    kappas = np.array([np.zeros(2), geom.f1p, -geom.f1p])
    Ge = dual(profile.lattice).generator
    offs = np.array(profile.band_set, dtype=float) @ Ge.T
    betas, kappa_idx = [], []
    for i, k in enumerate(kappas):
        for o in offs:
            betas.append(k + o)
            kappa_idx.append(i)
    return np.array(betas), np.array(kappa_idx), kappas


def _combined_blocks(profile, geom, mu, h, sigma, betas, kappa_idx, kappas):
    """Fiber blocks of (H0_hex - mu)^{-1} - J_hex R_hex J_hex* at sigma = h xi."""
    w0 = geom.w0
    pts = sigma[..., None, :] + betas                     # (..., B, 2)
    v = profile.phihat(pts)
    Rhex = np.linalg.inv(_hex_matrix(geom, sigma) / h**2
                         - mu * np.eye(2))
    Th = _theta_matrix(geom, sigma)
    ThS = (2.0 / 3.0) * Th.conj().swapaxes(-1, -2)
    sand = Th @ Rhex @ ThS                                # (..., 3, 3)
    W = np.stack([_w_from_phases(geom, sigma + k) for k in kappas], axis=-1)
    kmat = (W.conj().swapaxes(-1, -2) @ sand @ W) / 3.0   # (..., 3, 3)

    kk = kmat[..., kappa_idx[:, None], kappa_idx[None, :]]
    blocks = (v[..., :, None] * v[..., None, :]) * kk / w0
    g_cont = 1.0 / (0.75 * (2 * np.pi) ** 2 * (pts**2).sum(axis=-1) / h**2 - mu)
    idx = np.arange(len(betas))
    blocks[..., idx, idx] -= g_cont
    return blocks


def hex_convergence_chain(profile: CutoffProfile, geom: HexGeometry | None = None,
                          mu: complex = 1j, h_exponents=range(2, 9),
                          zone_res: int = 96, refine: int = 2) -> HexChainReport:
    """Measure the three O(h^2) steps from the honeycomb operator to
    -(3/4) Laplace: the interpolation projector defect, the intertwining
    defect, and the full embedded-resolvent difference."""
    mu = _check_mu(mu)
    if geom is None:
        geom = hex_geometry(1.0)
    if profile.lattice.name != "triangular_hex_frame":
        raise ValueError("chain needs the profile of the hex-frame triangular lattice")
    zone = brillouin_zone(dual(geom.coarse_lattice()), points_per_axis=zone_res)
    betas, kappa_idx, kappas = _chain_band_layout(profile, geom)
    eye3 = np.eye(3)

    def proj_fn(h):
        def fn(sigma):
            Rtr = np.linalg.inv(_tr_matrix(geom, sigma) / (2 * h**2) - mu * eye3)
            Th = _theta_matrix(geom, sigma)
            TT = Th @ ((2.0 / 3.0) * Th.conj().swapaxes(-1, -2))
            A = (eye3 - TT) @ Rtr
            return np.linalg.svd(A, compute_uv=False)[..., 0]
        return fn

    def twine_fn(h):
        def fn(sigma):
            Rtr = np.linalg.inv(_tr_matrix(geom, sigma) / (2 * h**2) - mu * eye3)
            Rhex = np.linalg.inv(_hex_matrix(geom, sigma) / h**2 - mu * np.eye(2))
            Th = _theta_matrix(geom, sigma)
            ThS = (2.0 / 3.0) * Th.conj().swapaxes(-1, -2)
            M = ThS @ Rtr - Rhex @ ThS
            return weighted_norm(M, 3, 2)
        return fn

    def combined_fn(h):
        def fn(sigma):
            B = _combined_blocks(profile, geom, mu, h, sigma, betas, kappa_idx, kappas)
            return np.linalg.svd(B, compute_uv=False)[..., 0]
        return fn

    reports = {}
    for tag, maker in (("projector", proj_fn), ("intertwine", twine_fn),
                       ("combined", combined_fn)):
        pairs = []
        for e in h_exponents:
            h = 2.0**-e
            res = sup_over_zone(maker(h), zone, refine=refine)
            pairs.append((h, res.value))
        reports[tag] = fit_rate(pairs, grid_config={
            "quantity": tag, "zone_res": zone_res, "mu": [mu.real, mu.imag],
            "profile_eps": profile.eps, "band_count": len(betas),
        })
    return HexChainReport(**reports)
