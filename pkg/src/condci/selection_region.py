"""Selection events on a Gaussian estimate vector and their truncation regions.

A selection event is a disjunction of clauses, each clause a conjunction of
linear threshold constraints ``coeffs @ theta_hat > bound`` (or ``<``).  To do
inference on one coordinate (the *target*), every coordinate is split into a
part proportional to the target and a residual that is uncorrelated with it::

    theta_hat[j] = slope[j] * theta_hat[target] + residual[j]

Holding the residuals at their observed values, each constraint becomes a
half-line in the target coordinate; the event becomes a finite union of
intervals.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Literal, Sequence

import numpy as np

from .gaussian_numerics import IntervalUnion

__all__ = [
    "Decomposition",
    "GaussianSummary",
    "LinearConstraint",
    "SelectionEvent",
    "UnobservedEventError",
    "decompose",
    "truncation_set",
    "truncation_set_batch",
]

Direction = Literal["greater", "less"]


class UnobservedEventError(ValueError):
    """Raised when asked to condition on an event the data did not satisfy."""

    def __init__(self, detail: str = ""):
        msg = "conditioning on unobserved event"
        super().__init__(f"{msg}: {detail}" if detail else msg)


@dataclass(frozen=True)
class GaussianSummary:
    """Estimates with per-observation covariance: ``theta_hat ~ N(theta, sigma_hat / n)``."""

    theta_hat: np.ndarray
    sigma_hat: np.ndarray
    n: int

    def __post_init__(self):
        th = np.atleast_1d(np.asarray(self.theta_hat, dtype=float))
        sg = np.atleast_2d(np.asarray(self.sigma_hat, dtype=float))
        if th.ndim != 1:
            raise ValueError("theta_hat must be a vector")
        d = th.shape[0]
        if sg.shape != (d, d):
            raise ValueError(f"sigma_hat must be {d}x{d}, got {sg.shape}")
        if not (np.all(np.isfinite(th)) and np.all(np.isfinite(sg))):
            raise ValueError("theta_hat and sigma_hat must be finite")
        if not np.allclose(sg, sg.T, rtol=1e-10, atol=1e-12):
            raise ValueError("sigma_hat must be symmetric")
        if np.any(np.diag(sg) <= 0):
            raise ValueError("sigma_hat diagonal must be strictly positive")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")
        th.setflags(write=False)
        sg = 0.5 * (sg + sg.T)
        sg.setflags(write=False)
        object.__setattr__(self, "theta_hat", th)
        object.__setattr__(self, "sigma_hat", sg)
        object.__setattr__(self, "n", int(self.n))

    @property
    def d(self) -> int:
        return self.theta_hat.shape[0]

    def se(self, index: int) -> float:
        """Standard error of coordinate ``index``, ``sqrt(sigma_hat[i, i] / n)``."""
        return math.sqrt(self.sigma_hat[index, index] / self.n)

    def z(self, index: int) -> float:
        return float(self.theta_hat[index]) / self.se(index)


@dataclass(frozen=True)
class LinearConstraint:
    """``coeffs @ theta_hat > bound`` (direction ``greater``) or ``< bound`` (``less``)."""

    coeffs: tuple[float, ...]
    bound: float
    direction: Direction = "greater"

    def __post_init__(self):
        c = tuple(float(v) for v in np.atleast_1d(np.asarray(self.coeffs, dtype=float)))
        if not c or all(v == 0 for v in c):
            raise ValueError("constraint coefficients must not all be zero")
        if any(not math.isfinite(v) for v in c):
            raise ValueError("constraint coefficients must be finite")
        if self.direction not in ("greater", "less"):
            raise ValueError(f"direction must be 'greater' or 'less', got {self.direction!r}")
        b = float(self.bound)
        if math.isnan(b):
            raise ValueError("constraint bound must not be NaN")
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "bound", b)

    @classmethod
    def on(cls, index: int, d: int, bound: float, direction: Direction = "greater", scale: float = 1.0):
        """Constraint ``scale * theta_hat[index] (>|<) bound`` in dimension ``d``."""
        coeffs = [0.0] * d
        coeffs[index] = scale
        return cls(tuple(coeffs), bound, direction)

    def holds(self, theta_hat) -> bool:
        v = float(np.dot(self.coeffs, theta_hat))
        return v > self.bound if self.direction == "greater" else v < self.bound

    def to_dict(self) -> dict[str, Any]:
        return {"coeffs": list(self.coeffs), "bound": _encode_float(self.bound), "direction": self.direction}

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "LinearConstraint":
        extra = set(obj) - {"coeffs", "bound", "direction"}
        if extra:
            raise ValueError(f"unknown constraint keys: {sorted(extra)}")
        try:
            return cls(tuple(obj["coeffs"]), _decode_float(obj["bound"]), obj.get("direction", "greater"))
        except KeyError as exc:
            raise ValueError(f"constraint missing key {exc}") from None


def _encode_float(v: float):
    return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")


def _decode_float(v) -> float:
    if isinstance(v, str):
        if v.strip().lower() in ("inf", "+inf", "infinity"):
            return math.inf
        if v.strip().lower() in ("-inf", "-infinity"):
            return -math.inf
    return float(v)


@dataclass(frozen=True)
class SelectionEvent:
    """Disjunction of clauses; each clause is a conjunction of constraints."""

    dnf: tuple[tuple[LinearConstraint, ...], ...] = field()

    def __post_init__(self):
        clauses = tuple(tuple(clause) for clause in self.dnf)
        if not clauses:
            raise ValueError("selection event needs at least one clause")
        if any(not clause for clause in clauses):
            raise ValueError("clauses must be non-empty")
        dims = {len(c.coeffs) for clause in clauses for c in clause}
        if len(dims) != 1:
            raise ValueError(f"constraints disagree on dimension: {sorted(dims)}")
        object.__setattr__(self, "dnf", clauses)

    @property
    def d(self) -> int:
        return len(self.dnf[0][0].coeffs)

    @property
    def constraints(self) -> list[LinearConstraint]:
        return [c for clause in self.dnf for c in clause]

    def holds(self, theta_hat) -> bool:
        return any(all(c.holds(theta_hat) for c in clause) for clause in self.dnf)

    # common shapes -------------------------------------------------------

    @classmethod
    def always(cls, d: int) -> "SelectionEvent":
        """The trivially true event (no selection)."""
        return cls(((LinearConstraint.on(0, d, -math.inf, "greater"),),))

    @classmethod
    def one_sided(cls, index: int, d: int, bound: float, direction: Direction = "greater") -> "SelectionEvent":
        return cls(((LinearConstraint.on(index, d, bound, direction),),))

    @classmethod
    def two_sided(cls, index: int, d: int, bound: float) -> "SelectionEvent":
        """``|theta_hat[index]| > bound``."""
        return cls(
            (
                (LinearConstraint.on(index, d, bound, "greater"),),
                (LinearConstraint.on(index, d, -bound, "less"),),
            )
        )

    @classmethod
    def between(cls, index: int, d: int, low: float, high: float) -> "SelectionEvent":
        return cls(
            (
                (
                    LinearConstraint.on(index, d, low, "greater"),
                    LinearConstraint.on(index, d, high, "less"),
                ),
            )
        )

    def conjoin(self, other: "SelectionEvent") -> "SelectionEvent":
        """Event ``self AND other``, distributed back into DNF."""
        return SelectionEvent(tuple(a + b for a in self.dnf for b in other.dnf))

    # serialization -------------------------------------------------------

    def to_json_obj(self) -> dict[str, Any]:
        return {"clauses": [[c.to_dict() for c in clause] for clause in self.dnf]}

    @classmethod
    def from_json_obj(cls, obj: dict[str, Any]) -> "SelectionEvent":
        if not isinstance(obj, dict) or set(obj) != {"clauses"}:
            raise ValueError("selection event must be an object with exactly one key 'clauses'")
        clauses = obj["clauses"]
        if not isinstance(clauses, list):
            raise ValueError("'clauses' must be a list of lists")
        return cls(tuple(tuple(LinearConstraint.from_dict(c) for c in clause) for clause in clauses))

    def dumps(self) -> str:
        return json.dumps(self.to_json_obj())

    @classmethod
    def loads(cls, text: str) -> "SelectionEvent":
        return cls.from_json_obj(json.loads(text))


@dataclass(frozen=True)
class Decomposition:
    """Split of every coordinate into a target-proportional part and a residual.

    ``t_value`` is the observed residual of the first non-target coordinate,
    the quantity conditioned on in the two-dimensional case.
    """

    target_index: int
    slope: np.ndarray
    residual: np.ndarray

    @property
    def t_value(self) -> float | None:
        others = [j for j in range(len(self.slope)) if j != self.target_index]
        return float(self.residual[others[0]]) if others else None


def decompose(gs: GaussianSummary, target_index: int) -> Decomposition:
    """Regress each coordinate of ``gs.theta_hat`` on the target coordinate."""
    if not 0 <= target_index < gs.d:
        raise IndexError(f"target_index {target_index} out of range for d={gs.d}")
    var_t = gs.sigma_hat[target_index, target_index]
    if not var_t > 0:
        raise ValueError("target coordinate has zero variance")
    slope = gs.sigma_hat[:, target_index] / var_t
    slope[target_index] = 1.0
    residual = gs.theta_hat - slope * gs.theta_hat[target_index]
    residual[target_index] = 0.0
    return Decomposition(target_index, slope, residual)


def _constraint_piece(
    c: LinearConstraint, dec: Decomposition, gs: GaussianSummary, delta_n: float
) -> IntervalUnion | None:
    coeffs = np.asarray(c.coeffs)
    t = dec.target_index
    if c.bound == -math.inf and c.direction == "greater" or c.bound == math.inf and c.direction == "less":
        return IntervalUnion.real_line()
    # covariance of the constraint statistic with the target, compared to delta_n
    cov_with_target = float(coeffs @ gs.sigma_hat[:, t])
    scale = float(np.max(np.abs(coeffs)))
    if abs(cov_with_target) <= delta_n * scale:
        return IntervalUnion.real_line() if c.holds(gs.theta_hat) else None
    a = float(coeffs @ dec.slope)  # induced coefficient on the target
    rest = float(coeffs @ dec.residual)
    cut = (c.bound - rest) / a
    upper_side = (c.direction == "greater") == (a > 0)
    return IntervalUnion([(cut, math.inf)] if upper_side else [(-math.inf, cut)])


def truncation_set(
    event: SelectionEvent,
    dec: Decomposition,
    gs: GaussianSummary,
    delta_n: float = 0.0,
) -> IntervalUnion:
    """Values of the target estimate compatible with ``event`` given the residuals.

    A constraint whose covariance with the target is at most ``delta_n`` (per
    unit of its largest coefficient) is treated as independent of the target:
    it contributes the whole line if it held at the observed data and nothing
    otherwise.
    """
    if delta_n < 0:
        raise ValueError("delta_n must be nonnegative")
    if event.d != gs.d:
        raise ValueError(f"event is {event.d}-dimensional but summary is {gs.d}-dimensional")
    if not event.holds(gs.theta_hat):
        raise UnobservedEventError(f"theta_hat={gs.theta_hat.tolist()}")

    pieces: list[tuple[float, float]] = []
    for clause in event.dnf:
        region: IntervalUnion | None = IntervalUnion.real_line()
        for c in clause:
            piece = _constraint_piece(c, dec, gs, delta_n)
            region = None if piece is None else region.intersect(piece)
            if region is None:
                break
        if region is not None:
            pieces.extend(region.intervals)
    if not pieces:
        raise AssertionError("empty truncation region for a satisfied event")
    out = IntervalUnion(pieces)
    x = float(gs.theta_hat[dec.target_index])
    # observed value can sit exactly on a cut through rounding; allow closure
    if not out.contains(x):
        tol = 1e-9 * max(1.0, abs(x))
        if not any(lo - tol <= x <= hi + tol for lo, hi in out):
            raise AssertionError(f"observed target {x} outside computed region {out}")
    return out


def truncation_set_batch(
    event: SelectionEvent,
    theta_hat: np.ndarray,
    sigma_hat: np.ndarray,
    target_index: int,
    delta_n: float = 0.0,
    bounds: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`truncation_set` over ``N`` replicates.

    Parameters
    ----------
    event
        Template event; its constraint coefficients are shared by all rows.
    theta_hat
        ``(N, d)`` estimates.
    sigma_hat
        ``(N, d, d)`` or ``(d, d)`` per-observation covariances.  The sample
        size cancels out of the region, so it is not needed here.
    bounds
        Optional ``(N, m)`` per-row bounds replacing the template bounds, in
        the order of ``event.constraints``.

    Returns
    -------
    lo, hi
        ``(N, K)`` component endpoints with ``K`` the number of clauses; empty
        components are ``(inf, inf)``.  Overlapping components are clipped so
        the remaining ones are disjoint.
    """
    theta_hat = np.atleast_2d(np.asarray(theta_hat, dtype=float))
    n_rows, d = theta_hat.shape
    if event.d != d:
        raise ValueError(f"event is {event.d}-dimensional but estimates are {d}-dimensional")
    sigma_hat = np.asarray(sigma_hat, dtype=float)
    if sigma_hat.ndim == 2:
        sigma_hat = np.broadcast_to(sigma_hat, (n_rows, d, d))
    col = sigma_hat[:, :, target_index]  # (N, d)
    var_t = col[:, target_index]
    if np.any(~(var_t > 0)):
        raise ValueError("target coordinate has zero variance")
    slope = col / var_t[:, None]
    slope[:, target_index] = 1.0
    x = theta_hat[:, target_index]
    residual = theta_hat - slope * x[:, None]
    residual[:, target_index] = 0.0

    constraints = event.constraints
    if bounds is None:
        bounds = np.broadcast_to(np.array([c.bound for c in constraints]), (n_rows, len(constraints)))
    else:
        bounds = np.asarray(bounds, dtype=float)
        if bounds.shape != (n_rows, len(constraints)):
            raise ValueError(f"bounds must have shape {(n_rows, len(constraints))}")

    satisfied_any = np.zeros(n_rows, dtype=bool)
    lo_cols, hi_cols = [], []
    k = 0
    for clause in event.dnf:
        lo = np.full(n_rows, -np.inf)
        hi = np.full(n_rows, np.inf)
        clause_holds = np.ones(n_rows, dtype=bool)
        dead = np.zeros(n_rows, dtype=bool)
        for c in clause:
            b = bounds[:, k]
            k += 1
            coeffs = np.asarray(c.coeffs)
            stat = theta_hat @ coeffs
            holds = stat > b if c.direction == "greater" else stat < b
            clause_holds &= holds
            cov_t = col @ coeffs
            weak = np.abs(cov_t) <= delta_n * np.max(np.abs(coeffs))
            dead |= weak & ~holds
            a = slope @ coeffs
            rest = residual @ coeffs
            with np.errstate(divide="ignore", invalid="ignore"):
                cut = (b - rest) / a
            upper_side = (a > 0) == (c.direction == "greater")
            trivial = weak | ~np.isfinite(b)
            lo = np.where(~trivial & upper_side, np.maximum(lo, cut), lo)
            hi = np.where(~trivial & ~upper_side, np.minimum(hi, cut), hi)
            # infinite bound on the impossible side kills the constraint
            if c.direction == "greater":
                dead |= b == np.inf
            else:
                dead |= b == -np.inf
        satisfied_any |= clause_holds
        empty = dead | ~(lo < hi)
        lo_cols.append(np.where(empty, np.inf, lo))
        hi_cols.append(np.where(empty, np.inf, hi))
    if not satisfied_any.all():
        bad = int(np.flatnonzero(~satisfied_any)[0])
        raise UnobservedEventError(f"row {bad}: theta_hat={theta_hat[bad].tolist()}")

    lo = np.column_stack(lo_cols)
    hi = np.column_stack(hi_cols)
    if lo.shape[1] > 1:
        order = np.argsort(lo, axis=1, kind="stable")
        lo = np.take_along_axis(lo, order, axis=1)
        hi = np.take_along_axis(hi, order, axis=1)
        prev_hi = np.maximum.accumulate(hi, axis=1)
        clip = np.concatenate([np.full((n_rows, 1), -np.inf), prev_hi[:, :-1]], axis=1)
        lo = np.maximum(lo, clip)
        empty = ~(lo < hi)
        lo = np.where(empty, np.inf, lo)
        hi = np.where(empty, np.inf, hi)
    return lo, hi


def region_from_arrays(lo: Sequence[float], hi: Sequence[float]) -> IntervalUnion:
    """Inverse of the padded-array encoding used by the batch routines."""
    return IntervalUnion([(a, b) for a, b in zip(lo, hi) if a < b])


def as_event(obj: SelectionEvent | dict | str | Iterable) -> SelectionEvent:
    """Coerce a JSON object/string or an existing event into a :class:`SelectionEvent`."""
    if isinstance(obj, SelectionEvent):
        return obj
    if isinstance(obj, str):
        return SelectionEvent.loads(obj)
    if isinstance(obj, dict):
        return SelectionEvent.from_json_obj(obj)
    raise TypeError(f"cannot interpret {type(obj).__name__} as a selection event")
