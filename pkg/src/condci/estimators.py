"""Estimators that turn subject-level data into Gaussian summaries.

All covariances use the per-observation convention: the estimator's
covariance is ``sigma_hat / n``.

The Cox fit and the mean estimators are written against *frequency weights*
so that a bootstrap resample is just a row of multinomial counts; ``B``
resamples are then fitted together as a ``(B, n)`` weight matrix.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .selection_region import GaussianSummary

__all__ = [
    "BOOTSTRAP_CHUNK",
    "BootstrapCovariance",
    "CoxFitError",
    "DataFormatError",
    "SurvivalData",
    "TwoArmContinuousData",
    "bootstrap_cov",
    "cox_loghr",
    "cox_loghr_weighted",
    "diff_in_means",
    "read_survival_csv",
    "read_two_arm_csv",
]

#: Resamples per RNG stream; stream ``k`` is seeded from ``(seed, k)``.
BOOTSTRAP_CHUNK = 250


class CoxFitError(ArithmeticError):
    """Partial-likelihood maximisation failed or the maximiser is infinite."""

    def __init__(self, message: str, last_iterate: float = math.nan):
        super().__init__(message)
        self.last_iterate = last_iterate


class DataFormatError(ValueError):
    """Malformed input file; ``line`` is 1-based and counts the header."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


def _binary(r, name="r") -> np.ndarray:
    r = np.asarray(r)
    if r.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if not np.all((r == 0) | (r == 1)):
        raise ValueError(f"{name} must contain only 0/1")
    return r.astype(np.int8)


@dataclass(frozen=True)
class TwoArmContinuousData:
    """``y[i, j]`` is outcome ``j`` of subject ``i``; ``r[i]`` is the arm (1 = treated)."""

    y: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        r = _binary(self.r)
        if y.ndim != 2 or y.shape[0] != r.shape[0]:
            raise ValueError("y must be (n, k) with n matching r")
        if not np.all(np.isfinite(y)):
            raise ValueError("y contains missing or non-finite values")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "r", r)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    def take(self, idx) -> "TwoArmContinuousData":
        return TwoArmContinuousData(self.y[idx], self.r[idx])


@dataclass(frozen=True)
class SurvivalData:
    """Right-censored times for ``m`` outcomes sharing one treatment indicator.

    ``time[i, j]`` is the observed time of outcome ``j`` for subject ``i`` and
    ``event[i, j]`` is 1 if it was an event, 0 if censored.
    """

    time: np.ndarray
    event: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.time, dtype=float)
        e = np.asarray(self.event)
        if t.ndim == 1:
            t, e = t[:, None], e[:, None]
        r = _binary(self.r)
        if t.shape != e.shape or t.shape[0] != r.shape[0]:
            raise ValueError("time and event must be (n, m) with n matching r")
        if not np.all(np.isfinite(t)) or np.any(t < 0):
            raise ValueError("times must be finite and nonnegative")
        if not np.all((e == 0) | (e == 1)):
            raise ValueError("event indicators must be 0/1")
        object.__setattr__(self, "time", t)
        object.__setattr__(self, "event", e.astype(np.int8))
        object.__setattr__(self, "r", r)

    @property
    def n(self) -> int:
        return self.time.shape[0]

    @property
    def m(self) -> int:
        return self.time.shape[1]

    def take(self, idx) -> "SurvivalData":
        return SurvivalData(self.time[idx], self.event[idx], self.r[idx])


# ---------------------------------------------------------------------------
# means
# ---------------------------------------------------------------------------


def _weighted_mean_cov(y: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-row weighted means and ``ddof=1`` covariances.

    ``y`` is ``(n, k)``, ``w`` is ``(B, n)`` frequency weights.  Returns
    ``(mean (B, k), cov (B, k, k), total (B,))``.
    """
    tot = w.sum(axis=1)
    mean = (w @ y) / tot[:, None]
    yc = y[None, :, :] - mean[:, None, :]
    cov = np.einsum("bn,bnj,bnk->bjk", w, yc, yc) / (tot - 1)[:, None, None]
    return mean, cov, tot


def _means_weighted(y, r, w, sample_mean: bool) -> tuple[np.ndarray, np.ndarray]:
    n = y.shape[0]
    if sample_mean:
        mean, cov, tot = _weighted_mean_cov(y, w)
        return mean, cov * (n / tot)[:, None, None]
    m1, c1, n1 = _weighted_mean_cov(y, w * r)
    m0, c0, n0 = _weighted_mean_cov(y, w * (1 - r))
    sigma = n * (c1 / n1[:, None, None] + c0 / n0[:, None, None])
    return m1 - m0, sigma


def diff_in_means(data: TwoArmContinuousData, sample_mean: bool = False) -> GaussianSummary:
    """Treated-minus-control mean difference for every outcome.

    Parameters
    ----------
    data
        Subject-level outcomes and arm labels.
    sample_mean
        Ignore the arm labels and summarise the single-sample means of all
        subjects; ``sigma_hat`` is then the sample covariance.

    Returns
    -------
    GaussianSummary
        With ``sigma_hat = n * (S1 / n1 + S0 / n0)``, ``S_a`` the within-arm
        sample covariances.
    """
    n = data.n
    if sample_mean:
        if n < 2:
            raise ValueError("sample_mean mode needs at least two subjects")
    else:
        n1 = int(data.r.sum())
        if n1 < 2 or n - n1 < 2:
            raise ValueError(f"each arm needs at least two subjects (treated={n1}, control={n - n1})")
    theta, sigma = _means_weighted(data.y, data.r.astype(float), np.ones((1, n)), sample_mean)
    return GaussianSummary(theta[0], sigma[0], n)


# ---------------------------------------------------------------------------
# Cox model with one binary covariate
# ---------------------------------------------------------------------------


@dataclass
class _CoxLayout:
    """Data sorted by time with tie groups, shared by every weight row."""

    order: np.ndarray
    r: np.ndarray
    d: np.ndarray
    group_start: np.ndarray

    @classmethod
    def build(cls, time: np.ndarray, event: np.ndarray, r: np.ndarray) -> "_CoxLayout":
        order = np.argsort(time, kind="stable")
        ts = time[order]
        new = np.ones(len(ts), dtype=bool)
        new[1:] = ts[1:] != ts[:-1]
        idx = np.flatnonzero(new)
        start = idx[np.cumsum(new) - 1]
        return cls(order, r[order].astype(float), event[order].astype(float), start)

    def risk_counts(self, w_sorted: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Weighted at-risk counts per arm at every subject's time (Breslow ties)."""
        rev1 = np.cumsum((w_sorted * self.r)[:, ::-1], axis=1)[:, ::-1]
        rev0 = np.cumsum((w_sorted * (1 - self.r))[:, ::-1], axis=1)[:, ::-1]
        return rev1[:, self.group_start], rev0[:, self.group_start]


def cox_loghr_weighted(
    time: np.ndarray,
    event: np.ndarray,
    r: np.ndarray,
    weights: np.ndarray | None = None,
    tol: float = 1e-10,
    max_iter: int = 50,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Newton fits of the treatment log hazard ratio for several weight vectors.

    Parameters
    ----------
    time, event, r
        ``(n,)`` arrays.
    weights
        ``(B, n)`` nonnegative frequency weights; defaults to one row of ones.

    Returns
    -------
    beta, info, ok
        ``(B,)`` estimates, observed information at the estimate, and a mask
        of rows with a finite maximiser that converged.  Failed rows hold NaN.
    """
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=float)
    r = np.asarray(r, dtype=float)
    if weights is None:
        weights = np.ones((1, time.shape[0]))
    weights = np.atleast_2d(np.asarray(weights, dtype=float))
    lay = _CoxLayout.build(time, event, r)
    w = weights[:, lay.order]
    n1, n0 = lay.risk_counts(w)
    # only event times enter the score
    cols = np.flatnonzero(lay.d)
    n1, n0 = n1[:, cols], n0[:, cols]
    wd = w[:, cols]
    rr = lay.r[cols]
    # score limits as beta -> +inf / -inf tell us whether the maximiser is finite
    live = wd > 0
    u_pos = np.sum(wd * (rr - (n1 > 0)), axis=1)
    u_neg = np.sum(wd * (rr - (n0 <= 0)), axis=1)
    scale = np.maximum(1.0, wd.sum(axis=1))
    ok = (u_pos < -1e-12 * scale) & (u_neg > 1e-12 * scale) & live.any(axis=1)

    rows = np.flatnonzero(ok)
    beta = np.zeros(len(rows))
    info = np.zeros(len(rows))
    wd_, n1_, n0_ = wd[rows], n1[rows], n0[rows]
    obs = wd_ @ rr  # weighted treated events
    converged = np.zeros(len(rows), dtype=bool)
    active = np.arange(len(rows))
    for _ in range(max_iter):
        if not active.size:
            break
        if active.size < len(rows):
            wd_, n1_, n0_, obs = wd_[keep], n1_[keep], n0_[keep], obs[keep]
        eb = np.exp(beta[active])[:, None]
        a1 = n1_ * eb
        denom = a1 + n0_
        with np.errstate(invalid="ignore", divide="ignore"):
            p = np.where(denom > 0, a1 / denom, 0.0)
        wp = wd_ * p
        score = obs - wp.sum(axis=1)
        inf_ = np.einsum("ij,ij->i", wp, 1 - p)
        info[active] = inf_
        done = np.abs(score) < tol
        converged[active[done]] = True
        step = np.clip(score / np.where(inf_ > 0, inf_, np.inf), -2.0, 2.0)
        beta[active] = np.where(done, beta[active], beta[active] + step)
        keep = ~done
        active = active[keep]
    out_beta = np.full(weights.shape[0], np.nan)
    out_info = np.full(weights.shape[0], np.nan)
    out_beta[rows[converged]] = beta[converged]
    out_info[rows[converged]] = info[converged]
    ok[rows[~converged]] = False
    return out_beta, out_info, ok


def cox_loghr(data: SurvivalData, outcome_index: int = 0) -> tuple[float, float]:
    """Maximum partial-likelihood log hazard ratio of treated vs control.

    Breslow ties; Newton on the score until ``|score| < 1e-10`` or 50 steps.

    Returns
    -------
    (theta_hat, info)
        The estimate and the observed information at it, so the
        standard error is ``info ** -0.5``.

    Raises
    ------
    CoxFitError
        If the maximiser is at infinity (monotone likelihood, e.g. no
        events in one arm) or Newton fails to converge.
    """
    t = data.time[:, outcome_index]
    e = data.event[:, outcome_index]
    for arm in (0, 1):
        if not np.any(e[data.r == arm] == 1):
            raise CoxFitError(f"outcome {outcome_index}: no events in arm {arm}; estimate is unbounded")
    beta, info, ok = cox_loghr_weighted(t, e, data.r)
    if not ok[0]:
        raise CoxFitError(
            f"outcome {outcome_index}: partial likelihood has no finite maximiser or Newton did not converge",
            float(beta[0]),
        )
    return float(beta[0]), float(info[0])


# ---------------------------------------------------------------------------
# bootstrap
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BootstrapCovariance:
    """Bootstrap covariance with the point estimates from the original data.

    ``sigma_hat`` may have zero diagonal entries (constant outcomes); use
    :meth:`summary` to get a validated :class:`GaussianSummary`.
    """

    theta_hat: np.ndarray
    sigma_hat: np.ndarray
    n: int
    B: int
    attempts: int
    replicates: np.ndarray

    def summary(self) -> GaussianSummary:
        return GaussianSummary(self.theta_hat, self.sigma_hat, self.n)

    @property
    def correlation(self) -> np.ndarray:
        sd = np.sqrt(np.diag(self.sigma_hat))
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.sigma_hat / np.outer(sd, sd)


def _batch_estimator(data, estimator: str) -> Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]:
    """Vectorised estimator over a ``(B, n)`` count matrix -> (estimates, ok)."""
    if estimator in ("diff_in_means", "sample_mean"):
        if not isinstance(data, TwoArmContinuousData):
            raise TypeError(f"{estimator} needs TwoArmContinuousData")
        sample = estimator == "sample_mean"
        r = data.r.astype(float)

        def run(w):
            if sample:
                ok = w.sum(axis=1) >= 2
            else:
                ok = ((w * r).sum(axis=1) >= 2) & ((w * (1 - r)).sum(axis=1) >= 2)
            est = np.full((w.shape[0], data.y.shape[1]), np.nan)
            if ok.any():
                theta, _ = _means_weighted(data.y, r, w[ok], sample)
                est[ok] = theta
            return est, ok

        return run
    if estimator == "cox":
        if not isinstance(data, SurvivalData):
            raise TypeError("cox needs SurvivalData")

        def run(w):
            cols, oks = [], []
            for j in range(data.m):
                b, _, ok = cox_loghr_weighted(data.time[:, j], data.event[:, j], data.r, w)
                cols.append(b)
                oks.append(ok)
            return np.column_stack(cols), np.logical_and.reduce(oks)

        return run
    raise ValueError(f"unknown estimator {estimator!r}; use 'diff_in_means', 'sample_mean', 'cox' or a callable")


def _callable_batch(data, fn: Callable) -> Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]:
    def run(w):
        rows, ok = [], []
        for counts in w:
            idx = np.repeat(np.arange(len(counts)), counts.astype(np.intp))
            try:
                est = np.atleast_1d(np.asarray(fn(data.take(idx)), dtype=float))
                good = bool(np.all(np.isfinite(est)))
            except (ArithmeticError, ValueError):
                est, good = None, False
            rows.append(est)
            ok.append(good)
        k = next((len(e) for e in rows if e is not None), 1)
        out = np.array([e if e is not None else np.full(k, np.nan) for e in rows])
        return out, np.array(ok)

    return run


def _point_estimate(data, estimator) -> np.ndarray:
    if callable(estimator):
        return np.atleast_1d(np.asarray(estimator(data), dtype=float))
    if estimator in ("diff_in_means", "sample_mean"):
        # no summary validation here: a constant outcome is allowed
        est, ok = _batch_estimator(data, estimator)(np.ones((1, data.n)))
        if not ok[0]:
            raise ValueError("each arm needs at least two subjects")
        return est[0]
    return np.array([cox_loghr(data, j)[0] for j in range(data.m)])


def bootstrap_cov(
    data: TwoArmContinuousData | SurvivalData,
    estimator: str | Callable = "diff_in_means",
    B: int = 10_000,
    seed: int = 0,
) -> BootstrapCovariance:
    """Nonparametric bootstrap of the per-observation covariance.

    Subjects are resampled with replacement ``B`` times and
    ``sigma_hat = n * cov(estimates)``.  Resamples are drawn in chunks of
    :data:`BOOTSTRAP_CHUNK`, chunk ``k`` from its own stream seeded by
    ``(seed, k)``, so the result does not depend on how chunks are scheduled.
    A resample on which the estimator fails is redrawn from the same stream;
    after ``10 * B`` draws in total the call gives up.

    Parameters
    ----------
    estimator
        ``"diff_in_means"``, ``"sample_mean"``, ``"cox"`` (every outcome of a
        :class:`SurvivalData`) or a callable mapping a data object to a vector.
    """
    if int(B) != B or B < 100:
        raise ValueError(f"B must be an integer >= 100, got {B}")
    n = data.n
    theta = _point_estimate(data, estimator)
    batch = _callable_batch(data, estimator) if callable(estimator) else _batch_estimator(data, estimator)

    reps: list[np.ndarray] = []
    attempts = 0
    limit = 10 * B
    n_chunks = -(-B // BOOTSTRAP_CHUNK)
    for k in range(n_chunks):
        need = min(BOOTSTRAP_CHUNK, B - k * BOOTSTRAP_CHUNK)
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,)))
        got: list[np.ndarray] = []
        have = 0
        while have < need:
            draw = need - have
            if attempts + draw > limit:
                raise ArithmeticError(f"bootstrap gave up after {attempts} resamples ({B} requested)")
            idx = rng.integers(0, n, size=(draw, n)) + (np.arange(draw) * n)[:, None]
            counts = np.bincount(idx.ravel(), minlength=draw * n).reshape(draw, n).astype(float)
            attempts += draw
            est, ok = batch(counts)
            got.append(est[ok])
            have += int(ok.sum())
        reps.append(np.concatenate(got)[:need])
    replicates = np.concatenate(reps)
    sigma = n * np.atleast_2d(np.cov(replicates, rowvar=False, ddof=1))
    return BootstrapCovariance(theta, sigma, n, B, attempts, replicates)


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def _read_columns(path: str | Path, columns: Sequence[str]) -> tuple[dict[str, np.ndarray], np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError("file is empty; a header row is required", 1) from None
        missing = [c for c in columns if c not in header]
        if missing:
            raise DataFormatError(f"header lacks column(s) {missing}; found {header}", 1)
        pos = {c: header.index(c) for c in columns}
        values: dict[str, list[float]] = {c: [] for c in columns}
        lines: list[int] = []
        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DataFormatError(f"expected {len(header)} fields, got {len(row)}", line)
            for c in columns:
                cell = row[pos[c]].strip()
                try:
                    v = float(cell)
                except ValueError:
                    raise DataFormatError(f"column {c!r}: cannot parse {cell!r} as a number", line) from None
                if not math.isfinite(v):
                    raise DataFormatError(f"column {c!r}: missing or non-finite value {cell!r}", line)
                values[c].append(v)
            lines.append(line)
    return {c: np.array(v) for c, v in values.items()}, np.array(lines, dtype=int)


def _check_binary(col: np.ndarray, name: str, lines: np.ndarray) -> None:
    bad = np.flatnonzero((col != 0) & (col != 1))
    if bad.size:
        raise DataFormatError(f"column {name!r} must be 0/1, got {col[bad[0]]}", int(lines[bad[0]]))


def read_two_arm_csv(path, outcomes: Sequence[str], treatment: str) -> TwoArmContinuousData:
    """Load continuous outcomes and a 0/1 treatment column from a headed CSV."""
    cols, lines = _read_columns(path, [*outcomes, treatment])
    if lines.size == 0:
        raise DataFormatError("no data rows")
    _check_binary(cols[treatment], treatment, lines)
    return TwoArmContinuousData(np.column_stack([cols[c] for c in outcomes]), cols[treatment])


def read_survival_csv(
    path, times: Sequence[str], events: Sequence[str], treatment: str
) -> SurvivalData:
    """Load one ``(time, event)`` column pair per outcome plus a treatment column."""
    if len(times) != len(events):
        raise ValueError("need one event column per time column")
    cols, lines = _read_columns(path, [*times, *events, treatment])
    if lines.size == 0:
        raise DataFormatError("no data rows")
    for c in (*events, treatment):
        _check_binary(cols[c], c, lines)
    for c in times:
        neg = np.flatnonzero(cols[c] < 0)
        if neg.size:
            raise DataFormatError(f"column {c!r}: negative time {cols[c][neg[0]]}", int(lines[neg[0]]))
    return SurvivalData(
        np.column_stack([cols[c] for c in times]),
        np.column_stack([cols[c] for c in events]),
        cols[treatment],
    )
