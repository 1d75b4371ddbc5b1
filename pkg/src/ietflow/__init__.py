"""Rauzy-Veech renormalization, adic coding and limit theorems for
interval exchange transformations and translation flows."""

__version__ = "0.1.0"

from .errors import (
    DegenerateGap,
    IetflowError,
    NeedDeeperWindow,
    NonGeneric,
    Singular,
    ValidationError,
)
from .rauzy import (
    Iet,
    Permutation,
    check_irreducible,
    expansion,
    iet_apply,
    induction_step,
    rauzy_class,
    rauzy_matrix,
    rauzy_move,
)
from .zipper import (
    HomologyForms,
    SurfacePoint,
    ZipperedRectangle,
    heights,
    sample_zr,
    teich_flow,
    veech_forms,
    vertical_flow,
    zr_induction,
)

__all__ = [
    "__version__",
    "DegenerateGap",
    "IetflowError",
    "NeedDeeperWindow",
    "NonGeneric",
    "Singular",
    "ValidationError",
    "Iet",
    "Permutation",
    "check_irreducible",
    "expansion",
    "iet_apply",
    "induction_step",
    "rauzy_class",
    "rauzy_matrix",
    "rauzy_move",
    "HomologyForms",
    "SurfacePoint",
    "ZipperedRectangle",
    "heights",
    "sample_zr",
    "teich_flow",
    "veech_forms",
    "vertical_flow",
    "zr_induction",
]
