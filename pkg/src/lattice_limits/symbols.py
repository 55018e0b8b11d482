"""Fourier symbols of lattice Laplacians and their resolvents.

For a lattice with weighted edge generators f^j the continuum operator has
symbol p0(xi) = sum_j mu_j (f^j . 2 pi xi)^2 and the scaled discrete operator
at mesh width h has symbol

    p0h(xi) = (2 / h^2) sum_j mu_j (1 - cos(h f^j . 2 pi xi)),

a (dual lattice)/h - periodic trigonometric polynomial with p0h = p0 + O(h^2).
Symbols are plain vectorized callables wrapped with a little metadata.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .lattice import BrillouinZone, LatticeSpec


def eval_p0(lattice: LatticeSpec, xi: np.ndarray) -> np.ndarray:
    """Continuum symbol sum_j mu_j (f^j . 2 pi xi)^2, vectorized over xi."""
    xi = np.asarray(xi, dtype=float)
    proj = 2.0 * np.pi * (xi @ lattice.edge_vectors.T)  # (..., K)
    return (lattice.edge_weights * proj**2).sum(axis=-1)


def eval_p0h(lattice: LatticeSpec, h: float, xi: np.ndarray) -> np.ndarray:
    """Discrete symbol (2/h^2) sum_j mu_j (1 - cos(h f^j . 2 pi xi))."""
    if h <= 0:
        raise ValueError("h must be positive")
    xi = np.asarray(xi, dtype=float)
    proj = 2.0 * np.pi * h * (xi @ lattice.edge_vectors.T)
    return (2.0 / h**2) * (lattice.edge_weights * (1.0 - np.cos(proj))).sum(axis=-1)


@dataclass(frozen=True)
class ScalarSymbol:
    """A scalar symbol xi -> value with enough metadata to reason about it."""

    kind: str                            # "continuum_p0" | "discrete_p0h" | "resolvent"
    fn: Callable[[np.ndarray], np.ndarray]
    lattice: LatticeSpec
    h: float | None = None               # set for discrete symbols
    mu: complex | None = None            # set for resolvents
    label: str = ""

    def __call__(self, xi: np.ndarray) -> np.ndarray:
        return self.fn(xi)

    @property
    def periodic(self) -> bool:
        return self.h is not None


def continuum_p0(lattice: LatticeSpec) -> ScalarSymbol:
    return ScalarSymbol(
        kind="continuum_p0",
        fn=lambda xi: eval_p0(lattice, xi),
        lattice=lattice,
        label=f"p0[{lattice.name}]",
    )


def discrete_p0h(lattice: LatticeSpec, h: float) -> ScalarSymbol:
    return ScalarSymbol(
        kind="discrete_p0h",
        fn=lambda xi: eval_p0h(lattice, h, xi),
        lattice=lattice,
        h=float(h),
        label=f"p0h[{lattice.name}, h={h}]",
    )


def resolvent_of(base: ScalarSymbol, mu: complex) -> ScalarSymbol:
    """(base - mu)^{-1}; mu must stay away from the (real) range of base."""
    mu = complex(mu)
    if abs(mu.imag) == 0.0 and mu.real >= 0.0:
        raise ValueError("mu on the nonnegative real axis touches the spectrum")
    return ScalarSymbol(
        kind="resolvent",
        fn=lambda xi, _f=base.fn: 1.0 / (_f(xi) - mu),
        lattice=base.lattice,
        h=base.h,
        mu=mu,
        label=f"({base.label} - {mu})^-1",
    )


@dataclass(frozen=True)
class SupResult:
    value: float
    argmax: np.ndarray
    grid_config: dict


def sup_over_zone(
    fn: Callable[[np.ndarray], np.ndarray],
    zone: BrillouinZone,
    refine: int = 3,
    subdiv: int = 8,
) -> SupResult:
    """sup |fn| over the zone grid with local refinement around the argmax.

    Each refinement round resamples a one-grid-cell neighbourhood of the
    current maximizer with `subdiv` times finer spacing (in fractional dual
    coordinates), so the estimate is monotone nondecreasing in `refine`.
    """
    gen = zone.dual.generator
    values = np.abs(fn(zone.points))
    best = int(np.argmax(values))
    best_val = float(values[best])
    best_xi = zone.points[best].copy()

    dim = zone.dim
    radius = 1.0 / zone.points_per_axis
    inv_gen = np.linalg.inv(gen)
    for _ in range(int(refine)):
        t0 = inv_gen @ best_xi
        offs = np.linspace(-radius, radius, 2 * subdiv + 1)
        local = np.stack(
            np.meshgrid(*[t0[i] + offs for i in range(dim)], indexing="ij"), axis=-1
        ).reshape(-1, dim)
        pts = local @ gen.T
        vals = np.abs(fn(pts))
        i = int(np.argmax(vals))
        if vals[i] > best_val:
            best_val = float(vals[i])
            best_xi = pts[i].copy()
        radius /= subdiv
    return SupResult(
        value=best_val,
        argmax=best_xi,
        grid_config={
            "points_per_axis": zone.points_per_axis,
            "kind": zone.kind,
            "refine": int(refine),
            "subdiv": int(subdiv),
        },
    )
