"""Finite L^p spaces, operators between them, and p -> p norm brackets."""

from .norms import (
    AscentError,
    NormBracket,
    counting_matrix,
    max_column_norm,
    max_row_norm,
    norm_bracket,
    opnorm_bracket,
    opnorm_certified,
    opnorm_lower,
    power_ascent,
    quick_norm,
)
from .serialize import (
    linop_from_json,
    linop_to_json,
    matrix_from_json,
    matrix_to_json,
    measure_from_json,
    measure_to_json,
)
from .spaces import (
    INF,
    LinOp,
    LpSpace,
    LpVector,
    MeasureSpace,
    PExponent,
    as_exponent,
    exact_tolerance,
    holder_conjugate,
    kron,
    residual,
    vec_pnorm,
)

__all__ = [
    "AscentError", "INF", "LinOp", "LpSpace", "LpVector", "MeasureSpace", "NormBracket",
    "PExponent", "as_exponent", "counting_matrix", "exact_tolerance", "holder_conjugate",
    "kron", "linop_from_json", "linop_to_json", "matrix_from_json", "matrix_to_json",
    "max_column_norm", "max_row_norm", "measure_from_json", "measure_to_json", "norm_bracket",
    "opnorm_bracket", "opnorm_certified", "opnorm_lower", "power_ascent", "quick_norm",
    "residual", "vec_pnorm",
]
