"""Conditional pivots, confidence intervals and p-values after selection.

Given a selection event, the target estimate is normal with its mean at the
target parameter, truncated to the region from
:func:`~condci.selection_region.truncation_set`.  The truncated CDF at the
observed estimate, viewed as a function of the hypothesised mean, is the
pivot: uniform under the truth and strictly decreasing in the mean, so
confidence limits are the means at which it crosses the tail levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.special import ndtri

from .gaussian_numerics import (
    IntervalUnion,
    TruncatedNormal,
    solve_mean_batch,
    trunc_cdf,
    trunc_cdf_batch,
)
from .selection_region import GaussianSummary, SelectionEvent, decompose, truncation_set

__all__ = [
    "ConditionalCIResult",
    "NEAR_BOUNDARY_SDS",
    "conditional_ci",
    "conditional_ci_batch",
    "conditional_p_value",
    "pivot",
    "pivot_batch",
    "wald_ci",
]

Sided = Literal["two", "lower", "upper"]
Alternative = Literal["greater", "less", "two_sided"]

#: Distance (in standard errors) from a finite region endpoint that raises ``near_boundary``.
NEAR_BOUNDARY_SDS = 0.1


@dataclass(frozen=True)
class ConditionalCIResult:
    """A confidence interval with its truncation region and diagnostics.

    ``sided="lower"`` means a lower confidence bound, ``[lower, inf)``;
    ``"upper"`` means ``(-inf, upper]``.
    """

    lower: float
    upper: float
    alpha: float
    region: IntervalUnion
    sided: Sided = "two"
    estimate: float = math.nan
    se: float = math.nan
    pivot_at_null: float | None = None
    unbounded_lower: bool = False
    unbounded_upper: bool = False
    near_boundary: bool = False
    method: str = "conditional"
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise ArithmeticError(f"interval endpoints out of order: ({self.lower}, {self.upper})")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @property
    def flags(self) -> dict[str, bool]:
        return {
            "unbounded_lower": self.unbounded_lower,
            "unbounded_upper": self.unbounded_upper,
            "near_boundary": self.near_boundary,
        }

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    def exp(self) -> tuple[float, float]:
        """Endpoints mapped through ``exp``, e.g. log hazard ratio to hazard ratio."""
        return math.exp(self.lower), math.exp(self.upper)


def _check_sided(sided: str) -> None:
    if sided not in ("two", "lower", "upper"):
        raise ValueError(f"sided must be 'two', 'lower' or 'upper', got {sided!r}")


def _tail_targets(alpha: float, sided: str) -> tuple[float | None, float | None]:
    """Pivot levels solved for the lower and upper limits (``None`` = infinite)."""
    if sided == "two":
        return 1 - alpha / 2, alpha / 2
    if sided == "lower":
        return 1 - alpha, None
    return None, alpha


def wald_ci(
    estimate: float,
    se: float,
    alpha: float = 0.05,
    sided: Sided = "two",
    crit: float | None = None,
) -> ConditionalCIResult:
    """``estimate ± z * se``, with ``z`` from ``alpha`` unless ``crit`` is given."""
    _check_sided(sided)
    if not se > 0:
        raise ValueError(f"se must be positive, got {se}")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if crit is None:
        crit = float(ndtri(1 - alpha / 2)) if sided == "two" else float(ndtri(1 - alpha))
    half = crit * se
    lower = estimate - half if sided in ("two", "lower") else -math.inf
    upper = estimate + half if sided in ("two", "upper") else math.inf
    return ConditionalCIResult(
        lower,
        upper,
        alpha,
        IntervalUnion.real_line(),
        sided=sided,
        estimate=float(estimate),
        se=float(se),
        method="wald",
        extra={"crit": crit},
    )


def _prepare(gs: GaussianSummary, target_index: int, event: SelectionEvent, delta_n: float):
    dec = decompose(gs, target_index)
    region = truncation_set(event, dec, gs, delta_n)
    return float(gs.theta_hat[target_index]), gs.se(target_index), region


def pivot(
    gs: GaussianSummary,
    target_index: int,
    event: SelectionEvent,
    theta0: float,
    delta_n: float = 0.0,
) -> float:
    """Truncated-normal CDF of the target estimate under mean ``theta0``."""
    x, sd, region = _prepare(gs, target_index, event, delta_n)
    return trunc_cdf(x, TruncatedNormal(float(theta0), sd, region))


def conditional_ci_batch(
    x,
    sd,
    lo,
    hi,
    alpha: float = 0.05,
    sided: Sided = "two",
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised interval endpoints for many ``(x, sd, region)`` rows.

    Unbounded endpoints come back as ``±inf``.
    """
    _check_sided(sided)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = x.shape[0]
    u_lo, u_hi = _tail_targets(alpha, sided)
    lower = np.full(n, -np.inf)
    upper = np.full(n, np.inf)
    if u_lo is not None:
        lower = solve_mean_batch(x, sd, lo, hi, u_lo)
    if u_hi is not None:
        upper = solve_mean_batch(x, sd, lo, hi, u_hi)
    return lower, upper


def conditional_ci(
    gs: GaussianSummary,
    target_index: int,
    event: SelectionEvent,
    alpha: float = 0.05,
    sided: Sided = "two",
    delta_n: float = 0.0,
    theta0: float | None = None,
) -> ConditionalCIResult:
    """Confidence interval for ``theta[target_index]`` conditional on ``event``.

    Parameters
    ----------
    gs
        Observed estimates, per-observation covariance and sample size.
    target_index
        Coordinate to make inference on.
    event
        Selection event the observed data satisfied.
    alpha
        One minus the conditional coverage level.
    sided
        ``"two"`` for an equal-tailed interval, ``"lower"`` for ``[L, inf)``,
        ``"upper"`` for ``(-inf, U]``.
    delta_n
        Covariance magnitude at or below which a constraint is treated as
        unrelated to the target.
    theta0
        If given, the pivot at this value is stored on the result.
    """
    _check_sided(sided)
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    x, sd, region = _prepare(gs, target_index, event, delta_n)
    # construction validates that the region carries mass at the observed estimate
    TruncatedNormal(x, sd, region)
    lo, hi = region.as_arrays()
    lower, upper = conditional_ci_batch(x, sd, lo[None, :], hi[None, :], alpha, sided)
    lower, upper = float(lower[0]), float(upper[0])
    near = any(abs(x - e) <= NEAR_BOUNDARY_SDS * sd for e in region.endpoints)
    piv = None
    if theta0 is not None:
        piv = trunc_cdf(x, TruncatedNormal(float(theta0), sd, region))
    return ConditionalCIResult(
        lower,
        upper,
        alpha,
        region,
        sided=sided,
        estimate=x,
        se=sd,
        pivot_at_null=piv,
        unbounded_lower=sided != "upper" and lower == -math.inf,
        unbounded_upper=sided != "lower" and upper == math.inf,
        near_boundary=near,
    )


def conditional_p_value(
    gs: GaussianSummary,
    target_index: int,
    event: SelectionEvent,
    theta0: float = 0.0,
    alternative: Alternative = "two_sided",
    delta_n: float = 0.0,
) -> float:
    """Conditional p-value for ``H0: theta[target_index] = theta0``.

    The pivot is the conditional probability of an estimate at or below the
    observed one, so ``greater`` uses its complement, ``less`` uses it
    directly and ``two_sided`` doubles the smaller tail.
    """
    u = pivot(gs, target_index, event, theta0, delta_n)
    if alternative == "greater":
        return 1.0 - u
    if alternative == "less":
        return u
    if alternative == "two_sided":
        return min(1.0, 2.0 * min(u, 1.0 - u))
    raise ValueError(f"alternative must be 'greater', 'less' or 'two_sided', got {alternative!r}")


def pivot_batch(x, sd, lo, hi, theta0) -> np.ndarray:
    """Vectorised :func:`pivot` on precomputed regions."""
    return trunc_cdf_batch(x, theta0, sd, lo, hi)
