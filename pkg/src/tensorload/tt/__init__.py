"""Tensor-train formats, cross interpolation and the AMEn linear solver."""

from .core import (
    MAX_DENSE,
    DenseSizeError,
    ShapeMismatchError,
    TtMatrix,
    TtVector,
    tt_add,
    tt_dot,
    tt_from_dense,
    tt_hadamard,
    tt_matvec,
    tt_norm,
    tt_round,
    tt_scale,
    tt_sum,
    tt_to_dense,
)
from .cross import CrossEvaluationError, CrossReport, maxvol, rect_maxvol, tt_cross
from .amen import AmenConvergenceError, SolveReport, amen_solve, residual_norm
from .io import dump_tt, load_tt

__all__ = [
    "MAX_DENSE",
    "DenseSizeError",
    "ShapeMismatchError",
    "TtMatrix",
    "TtVector",
    "tt_add",
    "tt_dot",
    "tt_from_dense",
    "tt_hadamard",
    "tt_matvec",
    "tt_norm",
    "tt_round",
    "tt_scale",
    "tt_sum",
    "tt_to_dense",
    "CrossEvaluationError",
    "CrossReport",
    "maxvol",
    "rect_maxvol",
    "tt_cross",
    "AmenConvergenceError",
    "SolveReport",
    "amen_solve",
    "residual_norm",
    "dump_tt",
    "load_tt",
]
