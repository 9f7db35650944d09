"""Hazard-ratio reanalysis of a stopped trial from published summary statistics.

The primary log hazard ratio crossed a stopping boundary; every endpoint's
interval is then recomputed conditional on that crossing.  Inputs are on the
per-observation scale used throughout the package: ``variance`` is ``n`` times
the squared standard error of the log hazard ratio.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Literal

from scipy.optimize import brentq

from .conditional_ci import ConditionalCIResult, conditional_ci, conditional_p_value, wald_ci
from .selection_region import GaussianSummary, SelectionEvent

__all__ = [
    "EndpointRow",
    "ReanalysisInput",
    "ReanalysisRow",
    "bundled_sprint_summary",
    "read_endpoints_csv",
    "reanalyze",
    "rejection_threshold",
]

Selection = Literal["two", "lower", "upper"]

_BUNDLED = Path(__file__).resolve().parent / "data" / "sprint_summary.json"
_INPUT_KEYS = {"n", "alpha", "primary", "threshold", "selection", "endpoints", "description"}


@dataclass(frozen=True)
class EndpointRow:
    """One endpoint: log hazard ratio, its variance and covariance with the primary.

    ``is_primary`` rows are the conditioning statistic itself; their estimate
    and variance are taken from the primary summary.
    """

    name: str
    estimate: float = math.nan
    variance: float = math.nan
    covariance: float = 0.0
    is_primary: bool = False

    def __post_init__(self):
        if not self.is_primary:
            if not math.isfinite(self.estimate):
                raise ValueError(f"endpoint {self.name!r}: estimate must be finite")
            if not self.variance > 0:
                raise ValueError(f"endpoint {self.name!r}: variance must be positive")
            if not math.isfinite(self.covariance):
                raise ValueError(f"endpoint {self.name!r}: covariance must be finite")


@dataclass(frozen=True)
class ReanalysisInput:
    """Primary summary, stopping rule and endpoint rows.

    Exactly one of ``threshold_z`` (boundary in standard errors) and
    ``threshold_estimate`` (boundary on the log hazard ratio scale) is given;
    it is converted once to the estimate scale by :attr:`boundary`.
    """

    n: int
    primary_estimate: float
    primary_variance: float
    endpoints: tuple[EndpointRow, ...]
    threshold_z: float | None = None
    threshold_estimate: float | None = None
    selection: Selection = "two"
    alpha: float = 0.05

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")
        if not self.primary_variance > 0:
            raise ValueError("primary variance must be positive")
        if (self.threshold_z is None) == (self.threshold_estimate is None):
            raise ValueError("give exactly one of threshold_z and threshold_estimate")
        if self.selection not in ("two", "lower", "upper"):
            raise ValueError(f"selection must be 'two', 'lower' or 'upper', got {self.selection!r}")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if not self.endpoints:
            raise ValueError("at least one endpoint row is required")
        object.__setattr__(self, "endpoints", tuple(self.endpoints))
        if self.boundary <= 0:
            raise ValueError("threshold must be positive; the sign is set by `selection`")

    @property
    def primary_se(self) -> float:
        return math.sqrt(self.primary_variance / self.n)

    @property
    def boundary(self) -> float:
        """Stopping boundary on the estimate scale."""
        if self.threshold_estimate is not None:
            return float(self.threshold_estimate)
        return float(self.threshold_z) * self.primary_se

    def event(self, d: int) -> SelectionEvent:
        """Stopping event on coordinate 0 of a ``d``-vector."""
        b = self.boundary
        if self.selection == "two":
            return SelectionEvent.two_sided(0, d, b)
        if self.selection == "lower":
            return SelectionEvent.one_sided(0, d, -b, "less")
        return SelectionEvent.one_sided(0, d, b, "greater")

    def summary(self, row: EndpointRow) -> tuple[GaussianSummary, int]:
        """Joint summary for ``row`` and the index of its coordinate."""
        if row.is_primary:
            return GaussianSummary([self.primary_estimate], [[self.primary_variance]], self.n), 0
        sigma = [
            [self.primary_variance, row.covariance],
            [row.covariance, row.variance],
        ]
        return GaussianSummary([self.primary_estimate, row.estimate], sigma, self.n), 1

    @classmethod
    def from_dict(cls, obj: dict[str, Any], endpoints: list[EndpointRow] | None = None) -> "ReanalysisInput":
        """Parse the JSON layout of the bundled summary file.

        ``{"n": ..., "alpha": 0.05, "selection": "lower",
        "primary": {"estimate": ..., "variance": ...},
        "threshold": {"z": 2.82} | {"estimate": ...},
        "endpoints": [{"name", "estimate", "variance", "covariance"} | {"name", "is_primary": true}]}``
        """
        unknown = set(obj) - _INPUT_KEYS
        if unknown:
            raise ValueError(f"unknown keys: {sorted(unknown)}")
        for key in ("n", "primary", "threshold"):
            if key not in obj:
                raise ValueError(f"missing key {key!r}")
        primary = obj["primary"]
        if set(primary) - {"name", "estimate", "variance"}:
            raise ValueError(f"unknown primary keys: {sorted(set(primary) - {'name', 'estimate', 'variance'})}")
        thr = obj["threshold"]
        if not isinstance(thr, dict) or len(thr) != 1 or next(iter(thr)) not in ("z", "estimate"):
            raise ValueError("threshold must be {'z': value} or {'estimate': value}")
        if endpoints is None:
            if "endpoints" not in obj:
                raise ValueError("missing key 'endpoints'")
            endpoints = [_endpoint_from_dict(e) for e in obj["endpoints"]]
        return cls(
            n=obj["n"],
            primary_estimate=float(primary["estimate"]),
            primary_variance=float(primary["variance"]),
            endpoints=tuple(endpoints),
            threshold_z=float(thr["z"]) if "z" in thr else None,
            threshold_estimate=float(thr["estimate"]) if "estimate" in thr else None,
            selection=obj.get("selection", "two"),
            alpha=float(obj.get("alpha", 0.05)),
        )

    @classmethod
    def load(cls, path, endpoints_csv=None) -> "ReanalysisInput":
        with open(path) as fh:
            obj = json.load(fh)
        rows = read_endpoints_csv(endpoints_csv) if endpoints_csv is not None else None
        return cls.from_dict(obj, rows)


_ENDPOINT_KEYS = {"name", "estimate", "variance", "covariance", "is_primary"}


def _endpoint_from_dict(obj: dict[str, Any]) -> EndpointRow:
    unknown = set(obj) - _ENDPOINT_KEYS
    if unknown:
        raise ValueError(f"unknown endpoint keys: {sorted(unknown)}")
    if "name" not in obj:
        raise ValueError("endpoint row needs a name")
    if obj.get("is_primary", False):
        return EndpointRow(str(obj["name"]), is_primary=True)
    missing = {"estimate", "variance", "covariance"} - set(obj)
    if missing:
        raise ValueError(f"endpoint {obj['name']!r} is missing {sorted(missing)}")
    return EndpointRow(str(obj["name"]), float(obj["estimate"]), float(obj["variance"]), float(obj["covariance"]))


def read_endpoints_csv(path) -> list[EndpointRow]:
    """Endpoint rows from a CSV with header ``name,estimate,variance,covariance``.

    A row whose ``covariance`` cell reads ``primary`` is the primary endpoint.
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"name", "estimate", "variance", "covariance"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ValueError(f"{path}: header must contain {sorted(need)}")
        for rec in reader:
            try:
                if rec["covariance"].strip().lower() == "primary":
                    rows.append(EndpointRow(rec["name"], is_primary=True))
                else:
                    rows.append(
                        EndpointRow(rec["name"], float(rec["estimate"]), float(rec["variance"]), float(rec["covariance"]))
                    )
            except ValueError as exc:
                raise ValueError(f"{path}, line {reader.line_num}: {exc}") from None
    return rows


@dataclass(frozen=True)
class ReanalysisRow:
    """Wald and conditional intervals for one endpoint, hazard-ratio scale."""

    name: str
    hazard_ratio: float
    wald_lower: float
    wald_upper: float
    cond_lower: float
    cond_upper: float
    z: float
    wald_p: float
    cond_p: float
    flags: dict = field(default_factory=dict)

    def as_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out.update(out.pop("flags"))
        return out


def _hr(x: float) -> float:
    return math.exp(x) if x < 700 else math.inf


def reanalyze(inp: ReanalysisInput) -> list[ReanalysisRow]:
    """Wald and conditional intervals for every endpoint row of ``inp``."""
    out = []
    for row in inp.endpoints:
        gs, t = inp.summary(row)
        ev = inp.event(gs.d)
        cond: ConditionalCIResult = conditional_ci(gs, t, ev, alpha=inp.alpha)
        est, se = float(gs.theta_hat[t]), gs.se(t)
        wald = wald_ci(est, se, inp.alpha)
        z = est / se
        wald_p = math.erfc(abs(z) / math.sqrt(2))
        cond_p = conditional_p_value(gs, t, ev, 0.0, "two_sided")
        out.append(
            ReanalysisRow(
                row.name,
                _hr(est),
                _hr(wald.lower),
                _hr(wald.upper),
                _hr(cond.lower) if cond.lower > -math.inf else 0.0,
                _hr(cond.upper),
                z,
                wald_p,
                cond_p,
                cond.flags,
            )
        )
    return out


def rejection_threshold(inp: ReanalysisInput, name: str, side: Literal["lower", "upper"] = "lower") -> float:
    """Z score of endpoint ``name`` at which its two-sided conditional p-value equals alpha.

    The primary estimate is held at its observed value and the endpoint
    estimate is moved along ``side`` of zero.
    """
    row = next((r for r in inp.endpoints if r.name == name), None)
    if row is None:
        raise KeyError(f"no endpoint named {name!r}")
    if row.is_primary:
        raise ValueError("the threshold is defined for endpoints other than the primary")
    gs, t = inp.summary(row)
    ev = inp.event(gs.d)
    se = gs.se(t)
    sign = -1.0 if side == "lower" else 1.0

    def excess(z: float) -> float:
        moved = GaussianSummary([inp.primary_estimate, sign * z * se], gs.sigma_hat, gs.n)
        return conditional_p_value(moved, t, ev, 0.0, "two_sided") - inp.alpha

    lo, hi = 0.0, 2.0
    if excess(lo) <= 0:
        raise ArithmeticError("the endpoint is already rejected at a zero estimate")
    while excess(hi) > 0:
        lo, hi = hi, hi * 2
        if hi > 1e3:
            raise ArithmeticError(f"no rejection threshold within |z| <= {lo}")
    return sign * brentq(excess, lo, hi, xtol=1e-12)


def bundled_sprint_summary() -> ReanalysisInput:
    """Summary statistics shipped with the package for the blood-pressure trial example."""
    return ReanalysisInput.load(_BUNDLED)
