"""Identification operators between lattice and continuum via a band cutoff.

The cutoff phi-hat is built from the indicator of the first Brillouin zone:
mollify, then normalize so that

    sum_eta |phi_hat(xi + eta)|^2 = cell volume of the lattice   (all xi).

The mollified indicator is tabulated on a uniform grid in fractional dual
coordinates t (xi = G t), where dual-lattice translates are integer shifts.
The normalization is applied at evaluation time from interpolated values, so
the identity above holds to machine precision everywhere, not just at nodes,
and |phi_hat|^2 equals the cell volume exactly on the inner plateau.

Position-space objects (J_h and its adjoint) live on a periodic box of
`grid_res` lattice cells; the band-limited interpolant through the tabulated
nodes makes Riemann sums over that box exact for all inner products that
appear, so isometry checks come out at rounding error.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .lattice import DualLattice, LatticeSpec, _shell_coords, dual

_DEFAULT_GRID_RES = {1: 256, 2: 96, 3: 48}


def _bump(u: np.ndarray) -> np.ndarray:
    """exp(-1/(1-u^2)) on (-1,1), zero outside."""
    out = np.zeros_like(u)
    inside = np.abs(u) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - u[inside] ** 2))
    return out


def _ws_membership(xi: np.ndarray, shell: np.ndarray, tol: float = 1e-14) -> np.ndarray:
    """|xi| <= |xi - eta| + tol for all nonzero shell vectors; xi flat (M, d)."""
    d0 = (xi**2).sum(axis=1)
    ok = np.ones(len(xi), dtype=bool)
    for eta in shell:
        ok &= d0 <= ((xi - eta) ** 2).sum(axis=1) + tol
    return ok


@dataclass(frozen=True, eq=False)
class CutoffProfile:
    """Tabulated band cutoff for one lattice.

    `values` holds the mollified zone indicator phi0 on the node grid
    t = k / grid_res, k in prod [-half_extent_i, half_extent_i].  phi_hat is
    sqrt(w0) * phi0 / sqrt(s) with s the sum of squared integer translates.
    """

    lattice: LatticeSpec
    eps: float
    grid_res: int
    half_extent: tuple          # per-axis node half extent K_i
    values: np.ndarray          # phi0 at nodes, shape (2K_0+1, ...)
    band_set: tuple             # integer dual offsets meeting the zone
    support_shell: tuple        # integer shifts used in the normalization sum
    r0: float                   # measured plateau radius (Cartesian)
    meta: dict

    def __post_init__(self):
        self.values.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.lattice.dim

    @property
    def cell_volume(self) -> float:
        return self.lattice.cell_volume

    @property
    def dual_lattice(self) -> DualLattice:
        return dual(self.lattice)

    # -- interpolation ------------------------------------------------------

    def _interp_base(self, t: np.ndarray) -> np.ndarray:
        """Multilinear interpolation of phi0 in t coordinates; 0 off the box."""
        t = np.asarray(t, dtype=float)
        shape = t.shape[:-1]
        flat = t.reshape(-1, self.dim)
        n = self.grid_res
        pos = flat * n + np.array(self.half_extent, dtype=float)
        idx = np.floor(pos).astype(np.int64)
        frac = pos - idx
        out = np.zeros(len(flat))
        sizes = self.values.shape
        for corner in itertools.product((0, 1), repeat=self.dim):
            ai = idx + np.array(corner)
            ok = np.ones(len(flat), dtype=bool)
            for axis in range(self.dim):
                ok &= (ai[:, axis] >= 0) & (ai[:, axis] < sizes[axis])
            if not ok.any():
                continue
            w = np.ones(ok.sum())
            for axis, c in enumerate(corner):
                w *= frac[ok, axis] if c else 1.0 - frac[ok, axis]
            gathered = self.values[tuple(ai[ok].T)]
            out[ok] += w * gathered
        return out.reshape(shape)

    def _norm_sq(self, t: np.ndarray) -> np.ndarray:
        """s(t) = sum over integer shifts m of phi0(t0 + m)^2, t0 = t - floor t.

        Reducing t first makes s exactly periodic under integer shifts, which
        is what keeps the normalization identity exact at arbitrary points.
        """
        t = np.asarray(t, dtype=float)
        t0 = t - np.floor(t)
        s = np.zeros(t.shape[:-1])
        for m in self.support_shell:
            s += self._interp_base(t0 + np.asarray(m, dtype=float)) ** 2
        return s

    def _to_frac(self, xi: np.ndarray) -> np.ndarray:
        # xi = G t  <=>  t = L^T xi
        return np.asarray(xi, dtype=float) @ self.lattice.generator

    def phihat_frac(self, t: np.ndarray) -> np.ndarray:
        """phi_hat as a function of fractional dual coordinates t = L^T xi.

        Feeding exact dyadic t here keeps integer-translate relations exact,
        which the spectral torus operators rely on.
        """
        t = np.asarray(t, dtype=float)
        num = self._interp_base(t)
        s = self._norm_sq(t)
        out = np.zeros_like(num)
        np.divide(num, np.sqrt(s, where=s > 0, out=np.ones_like(s)), where=s > 0, out=out)
        return np.sqrt(self.cell_volume) * out

    def phihat(self, xi: np.ndarray) -> np.ndarray:
        """The normalized cutoff sqrt(w0) * phi0 / sqrt(s), real-valued."""
        return self.phihat_frac(self._to_frac(xi))

    def band_ratio(self, xi: np.ndarray) -> np.ndarray:
        """|phi_hat|^2 / cell volume, computed so plateau values equal 1.0 exactly."""
        t = self._to_frac(xi)
        num = self._interp_base(t) ** 2
        s = self._norm_sq(t)
        out = np.zeros_like(num)
        np.divide(num, s, where=s > 0, out=out)
        return out

    def band_values(self, sigma: np.ndarray) -> np.ndarray:
        """phi_hat(sigma + G m) for each m in band_set; shape (..., B).

        `sigma` is the unscaled quasimomentum h*xi, so band values are the
        same for every mesh width.
        """
        t = self._to_frac(sigma)
        offsets = np.array(self.band_set, dtype=float)        # (B, d)
        tb = t[..., None, :] + offsets                        # (..., B, d)
        num = self._interp_base(tb)
        s = self._norm_sq(t)[..., None]
        out = np.zeros_like(num)
        np.divide(num, np.sqrt(s, where=s > 0, out=np.ones_like(s)), where=s > 0, out=out)
        return np.sqrt(self.cell_volume) * out

    def band_points(self, sigma: np.ndarray) -> np.ndarray:
        """sigma + G m for each band offset; shape (..., B, d)."""
        eta = np.array(self.band_set) @ self.dual_lattice.generator.T
        return np.asarray(sigma)[..., None, :] + eta

    # -- position space -----------------------------------------------------

    def position_kernel(self, samples_per_cell: int = 8) -> np.ndarray:
        """phi sampled on the periodic box of grid_res cells.

        Returns the band-limited interpolant through the tabulated phi_hat
        nodes, evaluated at fractional positions q / samples_per_cell.  The
        result is periodic with period grid_res cells per axis.
        """
        n = self.grid_res
        spc = int(samples_per_cell)
        size = spc * n
        d = self.dim
        t_node = self._node_coords()
        phihat_nodes = self._phihat_nodes()
        coef = phihat_nodes / (self.cell_volume * n**d)
        spectrum = np.zeros((size,) * d, dtype=complex)
        # node k (integer, |k_i| <= K_i) contributes at fine frequency k mod size
        k_axes = [np.arange(-K, K + 1) % size for K in self.half_extent]
        idx = np.ix_(*k_axes)
        spectrum[idx] = coef
        phi = np.fft.ifftn(spectrum) * size**d
        return phi

    def _node_coords(self) -> list:
        return [np.arange(-K, K + 1) / self.grid_res for K in self.half_extent]

    def _phihat_nodes(self) -> np.ndarray:
        # integer array shifts, not interpolation at float node coordinates,
        # so the translate sums at nodes carry no rounding from t itself.
        # The shift range here is wider than support_shell: node coordinates
        # span the whole box, not one reduced cell.
        n = self.grid_res
        s = np.zeros_like(self.values)
        for m in _node_shift_range(self.values, n):
            s += _integer_shift(self.values, [-c * n for c in m]) ** 2
        num = self.values
        out = np.zeros_like(num)
        np.divide(num, np.sqrt(s, where=s > 0, out=np.ones_like(s)), where=s > 0, out=out)
        return np.sqrt(self.cell_volume) * out

    # -- serialization ------------------------------------------------------

    def to_document(self) -> dict:
        return {
            "lattice": self.lattice.to_document(),
            "eps": self.eps,
            "grid_res": self.grid_res,
            "half_extent": list(self.half_extent),
            "values": self.values.ravel().tolist(),
            "band_set": [list(m) for m in self.band_set],
            "support_shell": [list(m) for m in self.support_shell],
            "r0": self.r0,
            "meta": self.meta,
        }

    @classmethod
    def from_document(cls, doc: dict) -> "CutoffProfile":
        lattice = LatticeSpec.from_document(doc["lattice"])
        shape = tuple(2 * int(k) + 1 for k in doc["half_extent"])
        return cls(
            lattice=lattice,
            eps=float(doc["eps"]),
            grid_res=int(doc["grid_res"]),
            half_extent=tuple(int(k) for k in doc["half_extent"]),
            values=np.array(doc["values"], dtype=float).reshape(shape),
            band_set=tuple(tuple(int(c) for c in m) for m in doc["band_set"]),
            support_shell=tuple(tuple(int(c) for c in m) for m in doc["support_shell"]),
            r0=float(doc["r0"]),
            meta=dict(doc["meta"]),
        )


def save_profile(profile: CutoffProfile, path: str | Path) -> None:
    Path(path).write_text(json.dumps(profile.to_document(), sort_keys=True) + "\n")


def load_profile(path: str | Path) -> CutoffProfile:
    return CutoffProfile.from_document(json.loads(Path(path).read_text()))


def default_eps(lattice: LatticeSpec) -> float:
    """0.05 x (facet distance of the dual Wigner-Seitz cell)."""
    dl = dual(lattice)
    norms = np.linalg.norm(dl.shell(2)[1:], axis=1)
    return 0.05 * norms.min() / 2.0


_PROFILE_CACHE: dict = {}


def build_cutoff(
    lattice: LatticeSpec,
    eps: float | None = None,
    grid_res: int | None = None,
) -> CutoffProfile:
    """Mollify the first-zone indicator and package it as a CutoffProfile.

    The mollifier is a tensor-product bump of half-width eps (Cartesian),
    applied as successive 1D convolutions along the fractional dual axes.
    Raises if the grid cannot resolve the mollifier (fewer than 4 cells
    across its width) or if the mollified support reaches a nonzero dual
    lattice point.  Profiles are immutable, so repeated builds with the
    same data are served from a cache.
    """
    d = lattice.dim
    dl = dual(lattice)
    G = dl.generator
    if eps is None:
        eps = default_eps(lattice)
    eps = float(eps)
    if grid_res is None:
        grid_res = _DEFAULT_GRID_RES[d]
    n = int(grid_res)

    key = (
        lattice.name,
        lattice.generator.tobytes(),
        lattice.edge_coords.tobytes(),
        lattice.edge_weights.tobytes(),
        eps,
        n,
    )
    cached = _PROFILE_CACHE.get(key)
    if cached is not None:
        return cached

    col_norms = np.linalg.norm(G, axis=0)
    radius_nodes = np.maximum(np.rint(eps / col_norms * n).astype(int), 0)
    if np.any(radius_nodes < 2):
        raise ValueError(
            f"grid_res={n} too coarse for eps={eps:g}: fewer than 4 cells across the mollifier"
        )

    shell = dl.shell(2)[1:]
    ws_radius = 0.5 * col_norms.sum()        # safe circumradius bound

    # probe the zone's reach along each fractional axis on a coarse mesh, then
    # size the tabulation box from that (the crude circumradius bound wastes
    # most of the box for skew generators)
    n_probe = 8
    probe_K = int(np.ceil(n_probe * ws_radius * np.linalg.norm(lattice.generator, axis=1).max())) + 1
    probe_axes = [np.arange(-probe_K, probe_K + 1) / n_probe] * d
    tp = np.stack(np.meshgrid(*probe_axes, indexing="ij"), axis=-1).reshape(-1, d)
    inside = _ws_membership(tp @ G.T, shell)
    extent_t = np.abs(tp[inside]).max(axis=0) + 2.0 / n_probe
    half_extent = tuple(
        int(np.ceil(n * (extent_t[i] + eps / col_norms[i])) + radius_nodes[i]) + 2
        for i in range(d)
    )

    axes = [np.arange(-K, K + 1) / n for K in half_extent]
    t = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    xi = t.reshape(-1, d) @ G.T
    near = (xi**2).sum(axis=1) <= (ws_radius + 2.0 / n) ** 2
    chi = np.zeros(len(xi))
    chi[near] = _ws_membership(xi[near], shell).astype(float)
    chi = chi.reshape(t.shape[:-1])

    phi0 = chi
    for axis in range(d):
        r = radius_nodes[axis]
        kernel = _bump(np.arange(-r, r + 1) / r)
        kernel /= kernel.sum()
        phi0 = ndimage.convolve1d(phi0, kernel, axis=axis, mode="constant", cval=0.0)

    _check_support(phi0, half_extent, n, d)
    support_shell = _support_shell(phi0, half_extent, n)
    band_set = _band_set(phi0, half_extent, n, dl, shell)
    r0, plateau_count = _plateau_radius(phi0, half_extent, n, G)
    if r0 <= 0:
        raise ValueError(f"eps={eps:g} leaves no plateau: cutoff would not be flat near 0")

    meta = {
        "kernel_radius_nodes": [int(r) for r in radius_nodes],
        "plateau_node_count": int(plateau_count),
        "support_nodes": int((phi0 > 0).sum()),
        "lattice": lattice.name,
    }
    profile = CutoffProfile(
        lattice=lattice,
        eps=eps,
        grid_res=n,
        half_extent=half_extent,
        values=phi0,
        band_set=band_set,
        support_shell=support_shell,
        r0=r0,
        meta=meta,
    )
    _PROFILE_CACHE[key] = profile
    return profile


def _check_support(phi0, half_extent, n, d):
    """Support must not touch the box edge or any nonzero dual node."""
    nz = np.argwhere(phi0 > 0)
    if nz.size == 0:
        raise ValueError("mollified indicator vanished; check eps and grid_res")
    sizes = phi0.shape
    if np.any(nz.min(axis=0) < 1) or np.any(nz.max(axis=0) > np.array(sizes) - 2):
        raise ValueError("tabulation box too small for the mollified support")
    for m in itertools.product(range(-2, 3), repeat=d):
        if all(c == 0 for c in m):
            continue
        idx = tuple(m[i] * n + half_extent[i] for i in range(d))
        if any(j < 0 or j >= sizes[i] for i, j in enumerate(idx)):
            continue
        window = phi0[tuple(slice(max(j - 1, 0), j + 2) for j in idx)]
        if np.any(window > 0):
            raise ValueError("eps too large: mollified support reaches a nonzero dual point")


def _support_shell(phi0, half_extent, n):
    """Integer shifts m whose translated unit cell [0,1)^d + m meets the support."""
    nz = np.argwhere(phi0 > 0)
    lo = (nz.min(axis=0) - np.array(half_extent)) / n
    hi = (nz.max(axis=0) - np.array(half_extent)) / n
    ranges = [range(int(np.ceil(l)) - 1, int(np.floor(h)) + 1) for l, h in zip(lo, hi)]
    return tuple(sorted(itertools.product(*ranges)))


def _node_shift_range(phi0, n):
    """Integer shifts m with (support + m n) meeting the node box at all."""
    nz = np.argwhere(phi0 > 0)
    sizes = np.array(phi0.shape)
    lo = np.floor((nz.min(axis=0) - (sizes - 1)) / n).astype(int)
    hi = np.floor(nz.max(axis=0) / n).astype(int)
    ranges = [range(l, h + 1) for l, h in zip(lo, hi)]
    return tuple(itertools.product(*ranges))


def _band_set(phi0, half_extent, n, dl, shell):
    """Integer dual offsets m with supp(phi0) meeting (Wigner-Seitz zone + G m)."""
    d = phi0.ndim
    nz = np.argwhere(phi0 > 0)
    t_sup = (nz - np.array(half_extent)) / n
    xi_sup = t_sup @ dl.generator.T
    ws_bound = 0.5 * np.linalg.norm(dl.generator, axis=0).sum() + np.linalg.norm(dl.generator) / n
    sup_reach = np.sqrt((xi_sup**2).sum(axis=1)).max() + ws_bound
    out = []
    for m in itertools.product(range(-3, 4), repeat=d):
        eta = dl.generator @ np.array(m, dtype=float)
        if np.linalg.norm(eta) > sup_reach:
            continue
        rel = xi_sup - eta
        near = (rel**2).sum(axis=1) <= ws_bound**2
        if not near.any():
            continue
        if _ws_membership(rel[near], shell).any():
            out.append(tuple(int(c) for c in m))
    return tuple(sorted(out))


def _plateau_radius(phi0, half_extent, n, G):
    """Largest |xi| below which only the m = 0 translate contributes."""
    d = phi0.ndim
    s_other = np.zeros_like(phi0)
    for m in _node_shift_range(phi0, n):
        if all(c == 0 for c in m):
            continue
        shifted = _integer_shift(phi0, [-c * n for c in m])
        s_other += shifted**2
    multi = (s_other > 0) | (phi0 < 1.0 - 1e-9)
    axes = [np.arange(-K, K + 1) / n for K in half_extent]
    t = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    xi_norm = np.linalg.norm(t @ G.T, axis=-1)
    if not multi.any():
        return float(xi_norm.max()), int((~multi).sum())
    r_break = float(xi_norm[multi].min())
    corners = np.array(list(itertools.product((-1.0, 1.0), repeat=d)))
    node_diam = np.linalg.norm(corners @ G.T, axis=1).max() / n
    return r_break - node_diam, int((~multi).sum())


def _integer_shift(arr, offsets):
    """Shift an array by integer offsets, filling with zeros (no wrap)."""
    out = arr
    for axis, off in enumerate(offsets):
        if off == 0:
            continue
        shifted = np.zeros_like(out)
        src = [slice(None)] * arr.ndim
        dst = [slice(None)] * arr.ndim
        if off > 0:
            dst[axis] = slice(off, None)
            src[axis] = slice(None, -off)
        else:
            dst[axis] = slice(None, off)
            src[axis] = slice(-off, None)
        shifted[tuple(dst)] = out[tuple(src)]
        out = shifted
    return out


# ---------------------------------------------------------------------------
# sampled fields and the identification operators
# ---------------------------------------------------------------------------


@dataclass
class LatticeField:
    """Values attached to integer lattice sites at spacing h."""

    values: np.ndarray       # (M,)
    sites: np.ndarray        # (M, d) integer coordinates
    h: float
    lattice: LatticeSpec

    def norm(self) -> float:
        w = self.lattice.cell_volume * self.h**self.lattice.dim
        return float(np.sqrt(w * (np.abs(self.values) ** 2).sum()))

    def inner(self, other: "LatticeField") -> complex:
        w = self.lattice.cell_volume * self.h**self.lattice.dim
        return complex(w * (np.conj(self.values) * other.values).sum())


@dataclass
class GridField:
    """Values on the periodic position grid of a profile's box.

    The box spans `cells` lattice cells per axis with `samples_per_cell`
    points per cell, all at mesh width h.
    """

    values: np.ndarray
    h: float
    samples_per_cell: int
    lattice: LatticeSpec

    @property
    def cells(self) -> int:
        return self.values.shape[0] // self.samples_per_cell

    def _weight(self) -> float:
        d = self.lattice.dim
        return self.lattice.cell_volume * (self.h / self.samples_per_cell) ** d

    def norm(self) -> float:
        return float(np.sqrt(self._weight() * (np.abs(self.values) ** 2).sum()))

    def inner(self, other: "GridField") -> complex:
        return complex(self._weight() * (np.conj(self.values) * other.values).sum())


@dataclass
class ZoneField:
    """Values on a Brillouin-zone quadrature grid scaled to h^{-1} Omega."""

    values: np.ndarray
    weights: np.ndarray
    points: np.ndarray
    h: float
    dim: int

    def norm(self) -> float:
        w = self.weights / self.h**self.dim
        return float(np.sqrt((w * np.abs(self.values) ** 2).sum()))


def fourier_discrete(field: LatticeField, zone) -> ZoneField:
    """F_h v on the zone grid scaled by 1/h; unitary on band-limited data.

    F_h v(xi) = w0 h^d sum_y exp(-2 pi i y . xi) v(y) over lattice sites
    y = h L m, evaluated at xi = (zone point)/h.
    """
    lat = field.lattice
    d = lat.dim
    t = zone.points @ lat.generator          # fractional coordinates of sigma
    phases = np.exp(-2j * np.pi * (t @ field.sites.T))   # (P, M)
    vals = lat.cell_volume * field.h**d * (phases @ field.values)
    return ZoneField(
        values=vals,
        weights=zone.weights.copy(),
        points=zone.points / field.h,
        h=field.h,
        dim=d,
    )


def apply_Jh(profile: CutoffProfile, h: float, field: LatticeField,
             samples_per_cell: int = 8) -> GridField:
    """J_h v = sqrt(w0) sum_z phi((x - z)/h) v(z) on the periodic box grid."""
    spc = int(samples_per_cell)
    phi = profile.position_kernel(spc)
    out = np.zeros_like(phi)
    for site, val in zip(field.sites, field.values):
        out = out + val * np.roll(phi, shift=tuple(int(c) * spc for c in site),
                                  axis=tuple(range(profile.dim)))
    out *= np.sqrt(profile.cell_volume)
    return GridField(values=out, h=float(h), samples_per_cell=spc, lattice=profile.lattice)


def apply_Jh_star(profile: CutoffProfile, grid: GridField,
                  sites: np.ndarray) -> LatticeField:
    """Adjoint of J_h for the box inner products; exact at these grids."""
    spc = grid.samples_per_cell
    phi = profile.position_kernel(spc)
    d = profile.dim
    vals = np.empty(len(sites), dtype=complex)
    for i, site in enumerate(sites):
        shifted = np.roll(phi, shift=tuple(int(c) * spc for c in site),
                          axis=tuple(range(d)))
        vals[i] = (np.conj(shifted) * grid.values).sum()
    vals *= np.sqrt(profile.cell_volume) / spc**d
    return LatticeField(values=vals, sites=np.asarray(sites), h=grid.h,
                        lattice=profile.lattice)


def apply_Th_fiber(profile: CutoffProfile, h: float, xi: np.ndarray,
                   g: np.ndarray) -> np.ndarray:
    """The fiber of T_h T_h^* at xi: the band projector applied to g.

    T_h T_h^* acts on the band vector (g_eta) as v (v . g) / w0 with
    v_eta = phi_hat(h xi + eta); on the plateau this is the projector onto
    the zero band.
    """
    v = profile.band_values(h * np.asarray(xi, dtype=float))
    g = np.asarray(g)
    return v * (np.conj(v) @ g) / profile.cell_volume


def gram_block(profile: CutoffProfile, reach: int = 2,
               route: str = "fourier") -> np.ndarray:
    """Gram matrix of {phi(. - z)} over the (2 reach + 1)^d block of sites.

    Inner products are over the periodic box.  The "position" route does the
    literal Riemann sum on the sample grid; the "fourier" route evaluates the
    same sums from the tabulated nodes (exactly equal: the integrands are
    band-limited trigonometric polynomials, so both quadratures are exact).
    """
    offsets = list(itertools.product(range(-reach, reach + 1), repeat=profile.dim))
    B = len(offsets)
    d = profile.dim
    if route == "position":
        # the integrand conj(phi) phi(.-m) is band-limited to twice the node
        # extent, so the Riemann sum is exact once spc * grid_res clears
        # 4 max(half_extent); keeping spc minimal bounds the 3d kernels
        n = profile.grid_res
        spc = max(2, -(-(4 * max(profile.half_extent) + 1) // n))
        phi = profile.position_kernel(spc)
        w = profile.cell_volume / spc**d
        axes = tuple(range(d))
        # gram[i, j] depends on m_j - m_i only; one rolled copy at a time
        corr = {}
        for m in itertools.product(range(-2 * reach, 2 * reach + 1), repeat=d):
            if m in corr:
                continue
            rolled = np.roll(phi, shift=tuple(c * spc for c in m), axis=axes)
            corr[m] = w * np.vdot(phi, rolled)
            # reindexing the periodic sum flips the offset and conjugates
            corr[tuple(-c for c in m)] = np.conj(corr[m])
        gram = np.empty((B, B), dtype=complex)
        for i, mi in enumerate(offsets):
            for j, mj in enumerate(offsets):
                gram[i, j] = corr[tuple(b - a for a, b in zip(mi, mj))]
        return gram
    # fold |phi_hat|^2 node values into one dual cell, then read correlations
    # off its DFT; exact by the same aliasing argument that makes the node
    # normalization the full translate sum
    n = profile.grid_res
    d = profile.dim
    g2 = profile._phihat_nodes() ** 2
    folded = np.zeros((n,) * d)
    idx = np.meshgrid(*[(np.arange(-K, K + 1)) % n for K in profile.half_extent],
                      indexing="ij")
    np.add.at(folded, tuple(idx), g2)
    corr = np.fft.fftn(folded) / (profile.cell_volume * n**d)
    gram = np.empty((B, B), dtype=complex)
    for i, mi in enumerate(offsets):
        for j, mj in enumerate(offsets):
            diff = tuple((mi[a] - mj[a]) % n for a in range(d))
            gram[i, j] = corr[diff]
    return gram


# ---------------------------------------------------------------------------
# spectral J / J* between nested lattice tori (used by the torus experiments)
# ---------------------------------------------------------------------------


def torus_J_pair(profile: CutoffProfile, N: int, refine: int):
    """Matrix-free J_h, J_h^* between an N-site lattice torus and its
    refine-times finer companion.

    Both tori share the box of N lattice cells; J is applied in Fourier
    space through phi_hat, so J^* J = identity holds exactly (the translate
    normalization holds at every evaluation point).  Returns (apply_J,
    apply_J_star) acting on shape (N,)*d and (refine*N,)*d arrays.
    """
    lat = profile.lattice
    d = lat.dim
    S = refine * N
    w0 = lat.cell_volume

    # frequency reach of phi_hat support in t units
    t_max = np.max(
        (np.argwhere(profile.values > 0).max(axis=0) - np.array(profile.half_extent))
        / profile.grid_res
    )
    K = int(np.ceil(t_max * N)) + 1
    if 2 * K + 1 > S:
        raise ValueError("refine too small: fine torus cannot hold the band reach")
    k_axes = [np.arange(-K, K + 1)] * d
    kmesh = np.stack(np.meshgrid(*k_axes, indexing="ij"), axis=-1)     # (..., d)
    phik = profile.phihat_frac(kmesh / N)      # k/N is exact for dyadic N
    idx_fine = np.ix_(*[(np.arange(-K, K + 1)) % S for _ in range(d)])
    idx_coarse = tuple(np.meshgrid(*[(np.arange(-K, K + 1)) % N for _ in range(d)],
                                   indexing="ij"))

    # J v = w0^{-1/2} N^{-d} sum_k phi_hat(G k/N) vhat[k mod N] e(k q / S);
    # the adjoint for the weighted torus products folds phi_hat * uhat back
    # onto coarse frequencies.  With these constants J* J = identity exactly.
    def apply_J(v: np.ndarray) -> np.ndarray:
        vhat = np.fft.fftn(v.reshape((N,) * d))
        spectrum = np.zeros((S,) * d, dtype=complex)
        spectrum[idx_fine] = phik * vhat[idx_coarse]
        return np.fft.ifftn(spectrum) * (refine**d / np.sqrt(w0))

    def apply_J_star(u: np.ndarray) -> np.ndarray:
        uhat = np.fft.fftn(u.reshape((S,) * d))
        coarse = np.zeros((N,) * d, dtype=complex)
        np.add.at(coarse, idx_coarse, phik * uhat[idx_fine])
        return np.fft.ifftn(coarse) / (np.sqrt(w0) * refine**d)

    return apply_J, apply_J_star
