"""Confidence intervals and p-values with exact coverage conditional on a selection event."""

from .conditional_ci import (
    ConditionalCIResult,
    conditional_ci,
    conditional_p_value,
    pivot,
    wald_ci,
)
from .gaussian_numerics import (
    DegenerateTruncationError,
    IntervalUnion,
    TruncatedNormal,
    bvn_upper_orthant,
    log_normal_tail,
    solve_mean,
    std_normal_cdf,
    trunc_cdf,
    trunc_quantile,
)
from .selection_region import (
    Decomposition,
    GaussianSummary,
    LinearConstraint,
    SelectionEvent,
    UnobservedEventError,
    decompose,
    truncation_set,
)

__version__ = "0.1.0"

__all__ = [
    "ConditionalCIResult",
    "Decomposition",
    "DegenerateTruncationError",
    "GaussianSummary",
    "IntervalUnion",
    "LinearConstraint",
    "SelectionEvent",
    "TruncatedNormal",
    "UnobservedEventError",
    "bvn_upper_orthant",
    "conditional_ci",
    "conditional_p_value",
    "decompose",
    "log_normal_tail",
    "pivot",
    "solve_mean",
    "std_normal_cdf",
    "trunc_cdf",
    "trunc_quantile",
    "truncation_set",
    "wald_ci",
]
