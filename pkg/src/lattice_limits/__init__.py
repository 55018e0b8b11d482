"""Numerical verification toolkit for continuum limits of lattice operators.

Discrete Laplacians on Bravais lattices (plus a two-site hexagonal example
and variable-coefficient elliptic operators on tori) are compared against
their continuum counterparts in the norm-resolvent sense.  The comparison is
done fiber-by-fiber in quasimomentum space, so operator norms of resolvent
differences come out of small dense blocks instead of large sparse solves.
"""

__version__ = "0.1.0"

from .lattice import (
    BrillouinZone,
    DualLattice,
    LatticeSpec,
    brillouin_zone,
    dual,
    make_preset,
)
from .embedding import CutoffProfile, build_cutoff, load_profile, save_profile
from .convergence import (
    ConvergenceReport,
    fit_rate,
    free_convergence_sweep,
    resolvent_difference_norm,
)
from .hexagonal import (
    HexFiber,
    HexGeometry,
    hex_convergence_chain,
    hex_eigenpairs,
    hex_fiber,
    hex_geometry,
    tr_eigenpairs,
)
from .elliptic import (
    CoefficientField,
    TorusOperator,
    assemble,
    difference_apply,
    elliptic_convergence,
    elliptic_estimate_check,
    identity_coefficients,
    load_coefficients,
)
from .schrodinger import (
    PotentialSpec,
    assemble_Hh,
    hausdorff_distance,
    lowest_eigenpairs,
    potential,
    resolvent_convergence_qualitative,
    spectra_hausdorff,
)

__all__ = [
    "BrillouinZone",
    "CoefficientField",
    "ConvergenceReport",
    "CutoffProfile",
    "DualLattice",
    "HexFiber",
    "HexGeometry",
    "LatticeSpec",
    "PotentialSpec",
    "TorusOperator",
    "assemble",
    "assemble_Hh",
    "brillouin_zone",
    "build_cutoff",
    "difference_apply",
    "dual",
    "elliptic_convergence",
    "elliptic_estimate_check",
    "fit_rate",
    "free_convergence_sweep",
    "hausdorff_distance",
    "hex_convergence_chain",
    "hex_eigenpairs",
    "hex_fiber",
    "hex_geometry",
    "identity_coefficients",
    "load_coefficients",
    "load_profile",
    "lowest_eigenpairs",
    "make_preset",
    "potential",
    "resolvent_convergence_qualitative",
    "resolvent_difference_norm",
    "save_profile",
    "spectra_hausdorff",
    "tr_eigenpairs",
]
