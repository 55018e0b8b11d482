"""Bravais lattices, dual lattices and Brillouin-zone sample grids.

A lattice is stored as a generator matrix (columns = basis vectors) together
with a finite family of weighted edge generators.  Edge generators live in
integer coordinates with respect to the basis, so translating a site by an
edge never leaves the lattice, no matter how irrational the embedding is.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

# Wigner-Seitz membership is decided against dual vectors with integer
# coordinates in [-WS_SHELL, WS_SHELL]^d.  Radius 2 is enough for reduced
# bases of the kind used here; it is a module constant, not a knob.
WS_SHELL = 2

_DET_TOL = 1e-12


def _shell_coords(dim: int, radius: int) -> np.ndarray:
    """All integer vectors in [-radius, radius]^dim, zero first, lex order."""
    rng = range(-radius, radius + 1)
    coords = np.array(sorted(itertools.product(rng, repeat=dim)), dtype=int)
    # put the origin in front so membership code can skip it cheaply
    origin = np.all(coords == 0, axis=1)
    return np.concatenate([coords[origin], coords[~origin]])


@dataclass(frozen=True, eq=False)
class LatticeSpec:
    """A Bravais lattice ``generator @ Z^d`` with weighted edge generators."""

    name: str
    dim: int
    generator: np.ndarray      # (d, d), columns are the basis vectors
    edge_coords: np.ndarray    # (K, d) integer coordinates w.r.t. the basis
    edge_weights: np.ndarray   # (K,) positive

    def __post_init__(self):
        gen = np.asarray(self.generator, dtype=float)
        coords = np.asarray(self.edge_coords)
        weights = np.asarray(self.edge_weights, dtype=float)
        if gen.shape != (self.dim, self.dim):
            raise ValueError(f"generator must be ({self.dim},{self.dim}), got {gen.shape}")
        if abs(np.linalg.det(gen)) <= _DET_TOL:
            raise ValueError("generator matrix is singular")
        if coords.ndim != 2 or coords.shape[1] != self.dim:
            raise ValueError("edge_coords must be (K, d)")
        if not np.issubdtype(coords.dtype, np.integer):
            rounded = np.rint(coords).astype(int)
            if not np.allclose(coords, rounded, atol=1e-9):
                raise ValueError("edge coordinates must be integers in the lattice basis")
            coords = rounded
        if weights.shape != (coords.shape[0],) or np.any(weights <= 0):
            raise ValueError("edge weights must be positive, one per edge generator")
        edges = (gen @ coords.T).T
        if np.linalg.matrix_rank(edges, tol=1e-10) < self.dim:
            raise ValueError("edge generators must span R^d")
        for arr in (gen, coords, weights):
            arr.setflags(write=False)
        object.__setattr__(self, "generator", gen)
        object.__setattr__(self, "edge_coords", coords)
        object.__setattr__(self, "edge_weights", weights)

    @property
    def cell_volume(self) -> float:
        """Volume of the fundamental domain, |det generator|."""
        return float(abs(np.linalg.det(self.generator)))

    @property
    def edge_vectors(self) -> np.ndarray:
        """Edge generators in Cartesian coordinates, shape (K, d)."""
        return (self.generator @ self.edge_coords.T).T

    def limit_matrix(self) -> np.ndarray:
        """sum_j mu_j f^j (f^j)^T; the continuum operator is xi . M xi."""
        f = self.edge_vectors
        return (self.edge_weights[:, None, None] * (f[:, :, None] * f[:, None, :])).sum(axis=0)

    def sites(self, coords: np.ndarray, h: float = 1.0) -> np.ndarray:
        """Cartesian positions of integer site coordinates at spacing h."""
        coords = np.asarray(coords)
        return h * (coords @ self.generator.T)

    def to_document(self) -> dict:
        return {
            "name": self.name,
            "dim": self.dim,
            "generator": [list(map(float, row)) for row in self.generator],
            "edges": [
                {"coords": [int(c) for c in row], "weight": float(w)}
                for row, w in zip(self.edge_coords, self.edge_weights)
            ],
        }

    @classmethod
    def from_document(cls, doc: dict) -> "LatticeSpec":
        try:
            edges = doc["edges"]
            return cls(
                name=str(doc["name"]),
                dim=int(doc["dim"]),
                generator=np.array(doc["generator"], dtype=float),
                edge_coords=np.array([e["coords"] for e in edges]),
                edge_weights=np.array([e["weight"] for e in edges], dtype=float),
            )
        except KeyError as exc:
            raise ValueError(f"lattice document missing field {exc}") from exc


def save_lattice(spec: LatticeSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(spec.to_document(), sort_keys=True, indent=2) + "\n")


def load_lattice(path: str | Path) -> LatticeSpec:
    """Load a lattice from a JSON or TOML document (extension decides)."""
    path = Path(path)
    if path.suffix == ".toml":
        doc = tomllib.loads(path.read_text())
    else:
        doc = json.loads(path.read_text())
    return LatticeSpec.from_document(doc)


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

_SQRT3 = np.sqrt(3.0)


def _square(d: int) -> LatticeSpec:
    return LatticeSpec(
        name=f"square_{d}",
        dim=d,
        generator=np.eye(d),
        edge_coords=np.eye(d, dtype=int),
        edge_weights=np.ones(d),
    )


def _triangular() -> LatticeSpec:
    # basis e1 = (1,0), e2 = (1/2, sqrt3/2); edges e1, e2, e3 = e2 - e1
    gen = np.array([[1.0, 0.5], [0.0, _SQRT3 / 2]])
    return LatticeSpec(
        name="triangular",
        dim=2,
        generator=gen,
        edge_coords=np.array([[1, 0], [0, 1], [-1, 1]]),
        edge_weights=np.ones(3),
    )


def _tetrahedral() -> LatticeSpec:
    gen = np.array(
        [
            [1.0, 0.5, 0.5],
            [0.0, _SQRT3 / 2, _SQRT3 / 6],
            [0.0, 0.0, np.sqrt(2.0 / 3.0)],
        ]
    )
    # the six edges of the regular tetrahedron cell: basis vectors and their
    # pairwise differences
    coords = np.array(
        [
            [1, 0, 0],
            [0, 1, 0],
            [0, 0, 1],
            [-1, 1, 0],
            [-1, 0, 1],
            [0, -1, 1],
        ]
    )
    return LatticeSpec("tetrahedral", 3, gen, coords, np.ones(6))


def _octahedral() -> LatticeSpec:
    gen = np.array(
        [
            [1.0, 0.0, 0.5],
            [0.0, 1.0, 0.5],
            [0.0, 0.0, 1.0 / np.sqrt(2.0)],
        ]
    )
    # e1, e2 and the four body vectors (+-1/2, +-1/2, 1/sqrt2); degree 12
    coords = np.array(
        [
            [1, 0, 0],
            [0, 1, 0],
            [0, 0, 1],
            [-1, 0, 1],
            [0, -1, 1],
            [-1, -1, 1],
        ]
    )
    return LatticeSpec("octahedral", 3, gen, coords, np.ones(6))


_PRESETS = {
    "square_1": lambda: _square(1),
    "square_2": lambda: _square(2),
    "square_3": lambda: _square(3),
    "triangular": _triangular,
    "tetrahedral": _tetrahedral,
    "octahedral": _octahedral,
}

PRESET_NAMES = tuple(sorted(_PRESETS))


def make_preset(name: str) -> LatticeSpec:
    """Build one of the named example lattices (square_1..3, triangular, ...)."""
    try:
        return _PRESETS[name]()
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; available: {', '.join(PRESET_NAMES)}")


# ---------------------------------------------------------------------------
# dual lattice and Brillouin zones
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DualLattice:
    """The dual lattice; generator columns b_i satisfy b_i . a_j = delta_ij."""

    parent: LatticeSpec
    generator: np.ndarray

    def __post_init__(self):
        gen = np.asarray(self.generator, dtype=float)
        gram = gen.T @ self.parent.generator
        if not np.allclose(gram, np.eye(self.parent.dim), atol=1e-10):
            raise ValueError("dual generator does not satisfy generator^T . L = I")
        gen.setflags(write=False)
        object.__setattr__(self, "generator", gen)

    @property
    def dim(self) -> int:
        return self.parent.dim

    @property
    def cell_volume(self) -> float:
        return float(abs(np.linalg.det(self.generator)))

    def points(self, coords: np.ndarray) -> np.ndarray:
        """Cartesian dual points for integer coordinate rows."""
        return np.asarray(coords) @ self.generator.T

    def shell(self, radius: int = WS_SHELL) -> np.ndarray:
        """Cartesian dual vectors with integer coords in [-radius, radius]^d."""
        return self.points(_shell_coords(self.dim, radius))

    def reduce(self, xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Translate points into the first Brillouin zone.

        Returns (representative, eta) with xi = representative + eta and eta
        a dual lattice vector.  Ties on the cell boundary go to the first
        dual vector in lexicographic shell order, which makes the cell
        half-open in a fixed, deterministic way.
        """
        xi = np.asarray(xi, dtype=float)
        flat = xi.reshape(-1, self.dim)
        # start from the parallelepiped representative so a radius-2 shell
        # always contains the minimizer
        frac = flat @ self.parent.generator  # t coordinates: xi = G t
        base = self.points(np.floor(frac + 0.5))
        centered = flat - base
        shell = self.shell(WS_SHELL)
        d2 = ((centered[:, None, :] - shell[None, :, :]) ** 2).sum(axis=2)
        pick = np.argmin(d2, axis=1)  # first index wins ties -> deterministic
        eta = base + shell[pick]
        rep = flat - eta
        return rep.reshape(xi.shape), eta.reshape(xi.shape)

    def in_first_zone(self, xi: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        """|xi| <= |xi - eta| + tol for every dual vector in the 2-shell."""
        xi = np.asarray(xi, dtype=float)
        flat = xi.reshape(-1, self.dim)
        shell = self.shell(WS_SHELL)[1:]  # skip the origin
        d0 = (flat**2).sum(axis=1)
        d = ((flat[:, None, :] - shell[None, :, :]) ** 2).sum(axis=2)
        ok = np.all(d0[:, None] <= d + tol, axis=1)
        return ok.reshape(xi.shape[:-1])


def dual(spec: LatticeSpec) -> DualLattice:
    """Dual lattice generated by the inverse transpose of the generator."""
    return DualLattice(parent=spec, generator=np.linalg.inv(spec.generator.T))


@dataclass(frozen=True, eq=False)
class BrillouinZone:
    """A quadrature grid over one fundamental domain of the dual lattice."""

    dual: DualLattice
    kind: str                  # "first_brillouin" or "parallelepiped"
    points: np.ndarray         # (M, d) sample points
    weights: np.ndarray        # (M,) quadrature weights, sum = 1/cell_volume
    points_per_axis: int

    def __post_init__(self):
        if self.kind not in ("first_brillouin", "parallelepiped"):
            raise ValueError(f"unknown zone kind {self.kind!r}")
        for arr in (self.points, self.weights):
            arr.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.dual.dim


def brillouin_zone(
    dual_lattice: DualLattice,
    points_per_axis: int,
    kind: str = "first_brillouin",
) -> BrillouinZone:
    """Half-open uniform grid over a fundamental domain of the dual lattice.

    The parallelepiped grid samples G @ (k/n) for k in [0, n)^d.  The
    first-Brillouin grid translates each of those points by a dual vector
    into the Wigner-Seitz cell; weights carry over unchanged because the
    translation is a bijection between fundamental domains.
    """
    n = int(points_per_axis)
    if n < 1:
        raise ValueError("points_per_axis must be >= 1")
    d = dual_lattice.dim
    axes = [np.arange(n) / n] * d
    frac = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    pts = frac @ dual_lattice.generator.T
    if kind == "first_brillouin":
        pts, _ = dual_lattice.reduce(pts)
    weights = np.full(len(pts), dual_lattice.cell_volume / n**d)
    return BrillouinZone(
        dual=dual_lattice,
        kind=kind,
        points=pts,
        weights=weights,
        points_per_axis=n,
    )
