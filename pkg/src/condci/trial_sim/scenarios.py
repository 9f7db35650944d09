"""Data generators and per-block simulation kernels for the built-in scenarios.

Each kernel simulates ``size`` consecutive replicates from one RNG and
returns long-format records (one row per replicate and reported parameter)
together with the number of replicates attempted.  Everything inside a
block is vectorised; the engine in :mod:`condci.trial_sim.engine` only
schedules blocks.

Record columns
--------------
rep       global replicate (attempt) index
param     reported parameter name
pattern   decision pattern, e.g. ``"S"``, ``"N,S"``; ``"-"`` marks "no gate"
truth     true parameter value
estimate  point estimate used by the interval
se        its standard error
<m>_lower, <m>_upper   interval endpoints for each method ``m``
<m>_pivot              conditional pivot at the truth (conditional methods)
corr                   setting2 only: bootstrap correlation of the two estimates
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
import pandas as pd
from scipy.optimize import brentq
from scipy.special import ndtri

from ..conditional_ci import conditional_ci_batch, pivot_batch
from ..estimators import bootstrap_cov, cox_loghr_weighted, SurvivalData
from ..gaussian_numerics import bvn_upper_orthant
from ..selection_region import LinearConstraint, SelectionEvent, truncation_set_batch

__all__ = [
    "GENERATORS",
    "PooledRow",
    "ScenarioKernel",
    "conditional_method_name",
    "generate_example1",
    "generate_example2",
    "generate_setting1",
    "generate_setting2",
    "generate_setting3",
    "generate_setting4",
    "mixing_matrix_setting1",
    "setting4_c0",
]

SQRT2 = math.sqrt(2.0)

MIX3 = np.array([[1.0, 0.0, 0.0], [0.5, 0.867, 0.0], [0.5, 0.289, 0.816]])
MIX4 = np.array([[1.0, 0.0], [0.5, 0.866]])
LITERAL_ROW_RHO04 = (0.5, 0.146)


def conditional_method_name(delta_n: float, all_deltas) -> str:
    """``"cond"`` for a single ``delta_n`` run, ``"cond_d<value>"`` in a sweep."""
    return "cond" if len(all_deltas) == 1 else f"cond_d{delta_n:g}"


# ---------------------------------------------------------------------------
# raw data generators
# ---------------------------------------------------------------------------


def _t4(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.standard_t(4, size=shape)


def mixing_matrix_setting1(rho: float, mixing: str = "unit") -> np.ndarray:
    """Mixing matrix for Setting 1.

    ``"unit"`` uses the row ``(rho, sqrt(1 - rho^2))`` so that both outcomes
    share the t4 variance and the correlation is exactly ``rho``.
    ``"literal"`` uses the published row ``(0.5, 0.146)`` for ``rho > 0``,
    whose realised correlation is about 0.96.
    """
    if not -1 < rho < 1:
        raise ValueError("rho must lie in (-1, 1)")
    if rho == 0:
        return np.eye(2)
    if mixing == "unit":
        return np.array([[1.0, 0.0], [rho, math.sqrt(1 - rho * rho)]])
    if mixing == "literal":
        return np.array([[1.0, 0.0], list(LITERAL_ROW_RHO04)])
    raise ValueError(f"mixing must be 'unit' or 'literal', got {mixing!r}")


def generate_setting1(n: int, rho: float, rng: np.random.Generator, reps: int = 1, mixing: str = "unit") -> np.ndarray:
    """``(reps, n, 2)`` primary/secondary outcomes built from independent t4 draws."""
    if n < 2:
        raise ValueError("n must be at least 2")
    x = _t4(rng, (reps, n, 2))
    return x @ mixing_matrix_setting1(rho, mixing).T


def generate_setting2(n: int, rng: np.random.Generator) -> SurvivalData:
    """Exponential frailty survival data; outcome 0 is OS (primary), 1 is PFS.

    No treatment effect: the arm label is drawn independently of the times.
    """
    lam = rng.uniform(0.0, 0.5, n)
    t1 = rng.exponential(1.0 / (1.0 + lam))
    t2 = rng.exponential(1.0 / (0.5 + lam))
    c = rng.uniform(0.0, 1.0, n)
    r = (rng.uniform(size=n) < 0.5).astype(np.int8)
    pfs = np.minimum(t1, t2)
    time = np.column_stack([np.minimum(t2, c), np.minimum(pfs, c)])
    event = np.column_stack([t2 < c, pfs < c]).astype(np.int8)
    return SurvivalData(time, event, r)


def generate_setting3(n: int, theta, rng: np.random.Generator, reps: int = 1) -> np.ndarray:
    """``(reps, n, 3)`` outcomes: t4 mixture with pairwise correlation 0.5 plus ``theta``."""
    x = _t4(rng, (reps, n, 3))
    return x @ MIX3.T + np.asarray(theta, dtype=float)


def generate_setting4(theta_p: float, theta_s: float, rng: np.random.Generator, reps: int = 1):
    """Two batches of 100 subjects; batch 2 is used only if the trial continues."""
    shift = np.array([theta_p, theta_s])
    b1 = _t4(rng, (reps, 100, 2)) @ MIX4.T + shift
    b2 = _t4(rng, (reps, 100, 2)) @ MIX4.T + shift
    return b1, b2


def generate_example1(rng: np.random.Generator, reps: int, theta=(0.0, 0.0, 0.0)) -> np.ndarray:
    cov = np.full((3, 3), 0.5) + 0.5 * np.eye(3)
    return rng.standard_normal((reps, 3)) @ np.linalg.cholesky(cov).T + np.asarray(theta)


def generate_example2(rng: np.random.Generator, reps: int, theta0: float = 0.75) -> np.ndarray:
    cov = np.array([[1.0, 0.5], [0.5, 0.5]])
    return rng.standard_normal((reps, 2)) @ np.linalg.cholesky(cov).T + theta0


def setting4_c0(alpha: float = 0.05) -> float:
    """Critical value with ``P(Z1 > sqrt2 c or Z2 > c) = alpha``, ``corr = 2^-1/2``.

    This is the overall rejection probability of the two-look design.
    """
    rho = 1 / SQRT2

    def excess(c):
        # P(Z1 <= sqrt2 c, Z2 <= c) = P(-Z1 > -sqrt2 c, -Z2 > -c)
        return 1.0 - bvn_upper_orthant(-SQRT2 * c, -c, rho) - alpha

    return brentq(excess, 0.0, 10.0, xtol=1e-14)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _sample_moments(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Means ``(R, k)`` and ``ddof=1`` covariances ``(R, k, k)`` of ``(R, n, k)`` data."""
    n = y.shape[1]
    mean = y.mean(axis=1)
    centred = y - mean[:, None, :]
    cov = np.einsum("rni,rnj->rij", centred, centred) / (n - 1)
    return mean, cov


def _cond_rows(
    event: SelectionEvent,
    theta_hat: np.ndarray,
    sigma_hat: np.ndarray,
    n: int,
    target: int,
    truth: float,
    alpha: float,
    sided: str,
    delta_n: float,
    bounds: np.ndarray | None = None,
):
    if sigma_hat.ndim == 2:
        sigma_hat = np.broadcast_to(sigma_hat, (theta_hat.shape[0],) + sigma_hat.shape)
    lo, hi = truncation_set_batch(event, theta_hat, sigma_hat, target, delta_n, bounds)
    x = theta_hat[:, target]
    sd = np.sqrt(sigma_hat[:, target, target] / n)
    lower, upper = conditional_ci_batch(x, sd, lo, hi, alpha, sided)
    piv = pivot_batch(x, sd, lo, hi, truth)
    return lower, upper, piv


def _frame(rep, param, pattern, truth, estimate, se, methods: dict[str, tuple], extra=None) -> pd.DataFrame:
    rep = np.asarray(rep)
    cols: dict[str, Any] = {
        "rep": rep.astype(np.int64),
        "param": np.broadcast_to(np.asarray(param, dtype=object), rep.shape),
        "pattern": np.broadcast_to(np.asarray(pattern, dtype=object), rep.shape),
        "truth": np.broadcast_to(np.asarray(truth, dtype=float), rep.shape),
        "estimate": np.asarray(estimate, dtype=float),
        "se": np.asarray(se, dtype=float),
    }
    for name, values in methods.items():
        cols[f"{name}_lower"] = np.asarray(values[0], dtype=float)
        cols[f"{name}_upper"] = np.asarray(values[1], dtype=float)
        if len(values) > 2:
            cols[f"{name}_pivot"] = np.asarray(values[2], dtype=float)
    for name, values in (extra or {}).items():
        cols[name] = np.asarray(values, dtype=float)
    return pd.DataFrame(cols)


def _wald(x, se, crit, sided):
    if sided == "two":
        return x - crit * se, x + crit * se
    if sided == "lower":
        return x - crit * se, np.full_like(x, np.inf)
    return np.full_like(x, -np.inf), x + crit * se


def _z(alpha, sided):
    return float(ndtri(1 - alpha / 2)) if sided == "two" else float(ndtri(1 - alpha))


@dataclass(frozen=True)
class PooledRow:
    """Report row merging several decision patterns of one parameter."""

    param: str
    label: str
    patterns: tuple[str, ...] | None = None  # None = every pattern


@dataclass(frozen=True)
class ScenarioKernel:
    """Simulation kernel plus the metadata the engine and reports need."""

    name: str
    block: Callable[..., tuple[pd.DataFrame, int]]
    defaults: dict[str, Any]
    until_selected: bool
    block_size: int
    sided: str
    pooled: Callable[[dict], tuple[PooledRow, ...]] = field(default=lambda p: ())
    pool_all_params: bool = False
    description: str = ""


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


def _block_example1(p, alpha, deltas, rng, start, size):
    gate = float(p["gate"])
    theta = np.asarray(p["theta"], dtype=float)
    est = generate_example1(rng, size, theta)
    cov = np.full((3, 3), 0.5) + 0.5 * np.eye(3)
    rep = start + np.arange(size)
    wald_crit = float(p["wald_crit"])
    frames = []
    lo1, hi1 = _wald(est[:, 0], 1.0, wald_crit, "lower")
    piv1 = pivot_batch(est[:, 0], 1.0, np.array([[-np.inf]]), np.array([[np.inf]]), theta[0])
    cond = {}
    for d in deltas:
        lo, hi = conditional_ci_batch(est[:, 0], 1.0, np.array([[-np.inf]]), np.array([[np.inf]]), alpha, "lower")
        cond[conditional_method_name(d, deltas)] = (lo, hi, piv1)
    frames.append(_frame(rep, "theta1", "-", theta[0], est[:, 0], 1.0, {"wald": (lo1, hi1), **cond}))

    s1 = est[:, 0] > gate
    s2 = s1 & (est[:, 1] > gate)
    for j, mask, ev in (
        (1, s1, SelectionEvent.one_sided(0, 3, gate)),
        (2, s2, SelectionEvent.one_sided(0, 3, gate).conjoin(SelectionEvent.one_sided(1, 3, gate))),
    ):
        if not mask.any():
            continue
        th = est[mask]
        wl, wu = _wald(th[:, j], 1.0, wald_crit, "lower")
        methods = {"wald": (wl, wu)}
        for d in deltas:
            methods[conditional_method_name(d, deltas)] = _cond_rows(ev, th, cov, 1, j, theta[j], alpha, "lower", d)
        pattern = "S" if j == 1 else "S,S"
        frames.append(_frame(rep[mask], f"theta{j + 1}", pattern, theta[j], th[:, j], 1.0, methods))
    return pd.concat(frames, ignore_index=True), size


def _block_example2(p, alpha, deltas, rng, start, size):
    theta0 = float(p["theta0"])
    fut, eff, fin = float(p["futility"]), float(p["efficacy"]), float(p["final"])
    est = generate_example2(rng, size, theta0)
    cov = np.array([[1.0, 0.5], [0.5, 0.5]])
    rep = start + np.arange(size)
    crit = _z(alpha, "two")
    th_i, th_f = est[:, 0], est[:, 1]
    cont = (th_i >= fut) & (th_i <= eff)
    groups = {
        "futility": (th_i < fut, 0, SelectionEvent.one_sided(0, 2, fut, "less")),
        "efficacy": (th_i > eff, 0, SelectionEvent.one_sided(0, 2, eff, "greater")),
        "final_negative": (
            cont & (th_f <= fin),
            1,
            SelectionEvent.between(0, 2, fut, eff).conjoin(SelectionEvent.one_sided(1, 2, fin, "less")),
        ),
        "final_positive": (
            cont & (th_f > fin),
            1,
            SelectionEvent.between(0, 2, fut, eff).conjoin(SelectionEvent.one_sided(1, 2, fin, "greater")),
        ),
    }
    frames = []
    for label, (mask, target, ev) in groups.items():
        if not mask.any():
            continue
        th = est[mask]
        se = math.sqrt(cov[target, target])
        methods = {"wald": _wald(th[:, target], se, crit, "two")}
        for d in deltas:
            methods[conditional_method_name(d, deltas)] = _cond_rows(ev, th, cov, 1, target, theta0, alpha, "two", d)
        frames.append(_frame(rep[mask], "theta0", label, theta0, th[:, target], se, methods))
    return pd.concat(frames, ignore_index=True), size


def _block_setting1(p, alpha, deltas, rng, start, size):
    n, rho = int(p["n"]), float(p["rho"])
    y = generate_setting1(n, rho, rng, size, p.get("mixing", "unit"))
    mean, cov = _sample_moments(y)
    crit_sel = float(p["screen_z"])
    se_p = np.sqrt(cov[:, 0, 0] / n)
    sel = np.abs(mean[:, 0]) > crit_sel * se_p
    rep = start + np.flatnonzero(sel)
    if not sel.any():
        return _empty_frame(deltas), size
    th, sg = mean[sel], cov[sel]
    se_s = np.sqrt(sg[:, 1, 1] / n)
    truth = 0.0
    crit = _z(alpha, "two")
    methods = {"wald": _wald(th[:, 1], se_s, crit, "two")}
    ev = SelectionEvent.two_sided(0, 2, 1.0)
    b = crit_sel * se_p[sel]
    bounds = np.column_stack([b, -b])
    for d in deltas:
        methods[conditional_method_name(d, deltas)] = _cond_rows(ev, th, sg, n, 1, truth, alpha, "two", d, bounds)
    return _frame(rep, "theta_s", "S", truth, th[:, 1], se_s, methods), size


def _block_setting2(p, alpha, deltas, rng, start, size):
    n, B = int(p["n"]), int(p["B"])
    crit_sel = float(p["screen_z"])
    crit = _z(alpha, "two")
    rows = []
    for i in range(size):
        data = generate_setting2(n, rng)
        beta, info, ok = cox_loghr_weighted(data.time[:, 0], data.event[:, 0], data.r)
        if not ok[0] or abs(beta[0]) <= crit_sel / math.sqrt(info[0]):
            continue
        boot_seed = int(rng.integers(0, 2**63 - 1))
        try:
            bc = bootstrap_cov(data, "cox", B, boot_seed)
        except ArithmeticError:
            continue  # secondary fit unbounded on the original data
        rows.append((start + i, bc.theta_hat, bc.sigma_hat, crit_sel / math.sqrt(info[0])))
    if not rows:
        return _empty_frame(deltas), size
    rep = np.array([r[0] for r in rows])
    th = np.array([r[1] for r in rows])
    sg = np.array([r[2] for r in rows])
    b = np.array([r[3] for r in rows])
    se_s = np.sqrt(sg[:, 1, 1] / n)
    methods = {"wald": _wald(th[:, 1], se_s, crit, "two")}
    ev = SelectionEvent.two_sided(0, 2, 1.0)
    for d in deltas:
        methods[conditional_method_name(d, deltas)] = _cond_rows(
            ev, th, sg, n, 1, 0.0, alpha, "two", d, np.column_stack([b, -b])
        )
    corr = sg[:, 0, 1] / np.sqrt(sg[:, 0, 0] * sg[:, 1, 1])
    return _frame(rep, "theta_s", "S", 0.0, th[:, 1], se_s, methods, {"corr": corr}), size


def _gate_event(index: int, d: int, significant: bool) -> SelectionEvent:
    # bounds are placeholders; per-row values are passed separately
    return SelectionEvent.two_sided(index, d, 1.0) if significant else SelectionEvent.between(index, d, -1.0, 1.0)


def _gate_bounds(significant: bool, b: np.ndarray) -> list[np.ndarray]:
    return [b, -b] if significant else [-b, b]


def _block_setting3(p, alpha, deltas, rng, start, size):
    n = int(p["n"])
    theta = np.asarray(p["theta"], dtype=float)
    y = generate_setting3(n, theta, rng, size)
    mean, cov = _sample_moments(y)
    if p.get("covariance", "analytic") == "bootstrap":
        cov = cov.copy()
        seeds = rng.integers(0, 2**63 - 1, size=size)
        from ..estimators import TwoArmContinuousData

        for i in range(size):
            data = TwoArmContinuousData(y[i], np.ones(n))
            cov[i] = bootstrap_cov(data, "sample_mean", int(p["B"]), int(seeds[i])).sigma_hat
    crit = _z(alpha, "two")
    gate_z = float(p["gate_z"])
    se = np.sqrt(np.diagonal(cov, axis1=1, axis2=2) / n)
    bnd = gate_z * se
    sig = np.abs(mean) >= bnd
    rep = start + np.arange(size)
    frames = []

    methods = {"wald": _wald(mean[:, 0], se[:, 0], crit, "two")}
    for d in deltas:
        ev = SelectionEvent.always(3)
        methods[conditional_method_name(d, deltas)] = _cond_rows(ev, mean, cov, n, 0, theta[0], alpha, "two", d)
    frames.append(_frame(rep, "theta1", "-", theta[0], mean[:, 0], se[:, 0], methods))

    for j in (1, 2):
        for pattern_bits in ([(True,), (False,)] if j == 1 else [(a, b) for a in (True, False) for b in (True, False)]):
            mask = np.ones(size, dtype=bool)
            for k, s in enumerate(pattern_bits):
                mask &= sig[:, k] == s
            if not mask.any():
                continue
            ev = _gate_event(0, 3, pattern_bits[0])
            bounds = _gate_bounds(pattern_bits[0], bnd[mask, 0])
            if j == 2:
                ev = ev.conjoin(_gate_event(1, 3, pattern_bits[1]))
                bounds += _gate_bounds(pattern_bits[1], bnd[mask, 1])
            bounds_arr = _conjoined_bounds(ev, bounds, pattern_bits)
            th, sg = mean[mask], cov[mask]
            methods = {"wald": _wald(th[:, j], se[mask, j], crit, "two")}
            for d in deltas:
                methods[conditional_method_name(d, deltas)] = _cond_rows(
                    ev, th, sg, n, j, theta[j], alpha, "two", d, bounds_arr
                )
            pattern = ",".join("S" if s else "N" for s in pattern_bits) + (",-" if j == 1 else "")
            frames.append(_frame(rep[mask], f"theta{j + 1}", pattern, theta[j], th[:, j], se[mask, j], methods))
    return pd.concat(frames, ignore_index=True), size


def _conjoined_bounds(ev: SelectionEvent, gate_bounds: list[np.ndarray], bits) -> np.ndarray:
    """Per-row bounds in the constraint order of a conjoined two-gate event.

    ``gate_bounds`` holds the two bound arrays of gate 1 followed by those of
    gate 2.  Significant gates are 2-clause events (one constraint each);
    non-significant gates are 1-clause events with 2 constraints.
    """
    g1, g2 = gate_bounds[:2], gate_bounds[2:]
    if not g2:
        return np.column_stack(g1)

    def clauses(gb, significant):
        return [[gb[0]], [gb[1]]] if significant else [[gb[0], gb[1]]]

    cols = []
    for a in clauses(g1, bits[0]):
        for b in clauses(g2, bits[1]):
            cols.extend(a + b)
    out = np.column_stack(cols)
    assert out.shape[1] == len(ev.constraints)
    return out


def _block_setting4(p, alpha, deltas, rng, start, size):
    theta_p, theta_s = float(p["theta_p"]), float(p["theta_s"])
    c0 = setting4_c0(float(p["design_alpha"]))
    b1_data, b2_data = generate_setting4(theta_p, theta_s, rng, size)
    m1, v1 = _sample_moments(b1_data)
    m2, v2 = _sample_moments(np.concatenate([b1_data, b2_data], axis=1))
    sp1 = np.sqrt(v1[:, 0, 0])
    sp2 = np.sqrt(v2[:, 0, 0])
    bound1 = SQRT2 * c0 * sp1 / 10
    bound2 = c0 * sp2 / (10 * SQRT2)
    stop = m1[:, 0] > bound1
    final_s = m2[:, 0] >= bound2
    rep = start + np.arange(size)
    frames = []
    ss1 = np.sqrt(v1[:, 1, 1])
    ss2 = np.sqrt(v2[:, 1, 1])

    # stopped at interim
    if stop.any():
        idx = np.flatnonzero(stop)
        th2 = m1[idx]
        sg2 = v1[idx]
        wl_p = th2[:, 0] - SQRT2 * c0 * sp1[idx] / 10
        wl_s = th2[:, 1] - SQRT2 * c0 * ss1[idx] / 10
        ev = SelectionEvent.one_sided(0, 2, 1.0, "greater")
        bnd = bound1[idx][:, None]
        for param, j, truth, wl, se in (
            ("theta_p", 0, theta_p, wl_p, sp1[idx] / 10),
            ("theta_s", 1, theta_s, wl_s, ss1[idx] / 10),
        ):
            methods = {"wald": (wl, np.full_like(wl, np.inf))}
            for d in deltas:
                methods[conditional_method_name(d, deltas)] = _cond_rows(
                    ev, th2, sg2, 100, j, truth, alpha, "lower", d, bnd
                )
            frames.append(_frame(rep[idx], param, "S,-", truth, th2[:, j], se, methods))

    # continued to the final look
    for fs in (True, False):
        mask = ~stop & (final_s == fs)
        if not mask.any():
            continue
        idx = np.flatnonzero(mask)
        th4 = np.column_stack([m1[idx, 0], m2[idx, 0], m1[idx, 1], m2[idx, 1]])
        v = v2[idx]
        vp, vs, vps = v[:, 0, 0], v[:, 1, 1], v[:, 0, 1]
        sg4 = np.empty((len(idx), 4, 4))
        base = np.array([[2.0, 1.0], [1.0, 1.0]])
        sg4[:, :2, :2] = vp[:, None, None] * base
        sg4[:, 2:, 2:] = vs[:, None, None] * base
        sg4[:, :2, 2:] = vps[:, None, None] * base
        sg4[:, 2:, :2] = vps[:, None, None] * base
        ev = SelectionEvent.one_sided(0, 4, 1.0, "less").conjoin(
            SelectionEvent.one_sided(1, 4, 1.0, "greater" if fs else "less")
        )
        bnd = np.column_stack([bound1[idx], bound2[idx]])
        pattern = "N,S" if fs else "N,N"
        for param, j, truth, sd_obs in (
            ("theta_p", 1, theta_p, sp2[idx]),
            ("theta_s", 3, theta_s, ss2[idx]),
        ):
            wl = th4[:, j] - c0 * sd_obs / (10 * SQRT2)
            methods = {"wald": (wl, np.full_like(wl, np.inf))}
            for d in deltas:
                methods[conditional_method_name(d, deltas)] = _cond_rows(
                    ev, th4, sg4, 200, j, truth, alpha, "lower", d, bnd
                )
            se = np.sqrt(sg4[:, j, j] / 200)
            frames.append(_frame(rep[idx], param, pattern, truth, th4[:, j], se, methods))
    return pd.concat(frames, ignore_index=True), size


def _empty_frame(deltas) -> pd.DataFrame:
    cols = ["rep", "param", "pattern", "truth", "estimate", "se", "wald_lower", "wald_upper"]
    for d in deltas:
        m = conditional_method_name(d, deltas)
        cols += [f"{m}_lower", f"{m}_upper", f"{m}_pivot"]
    return pd.DataFrame({c: pd.Series(dtype=object if c in ("param", "pattern") else float) for c in cols}).astype(
        {"rep": np.int64}
    )


# ---------------------------------------------------------------------------
# custom Gaussian scenarios
# ---------------------------------------------------------------------------


def _negate(event: SelectionEvent) -> SelectionEvent:
    """Complement of a DNF event, expanded back into DNF."""
    flipped = [
        [LinearConstraint(c.coeffs, c.bound, "less" if c.direction == "greater" else "greater") for c in clause]
        for clause in event.dnf
    ]
    out = [()]
    for options in flipped:
        out = [prev + (c,) for prev in out for c in options]
    return SelectionEvent(tuple(out))


def _block_gaussian(p, alpha, deltas, rng, start, size):
    theta = np.asarray(p["theta"], dtype=float)
    sigma = np.asarray(p["sigma"], dtype=float)
    n = int(p["n"])
    d = theta.shape[0]
    est = rng.standard_normal((size, d)) @ np.linalg.cholesky(sigma / n).T + theta
    gates = [SelectionEvent.from_json_obj(g) if isinstance(g, dict) else g for g in p.get("gates", [])]
    gate_hits = np.array([[g.holds(row) for g in gates] for row in est]).reshape(size, len(gates))
    rep = start + np.arange(size)
    sided = p.get("sided", "two")
    crit = _z(alpha, sided)
    frames = []
    for t in p["targets"]:
        j = int(t["index"])
        given = [int(g) for g in t.get("given", [])]
        keys = gate_hits[:, given] if given else np.zeros((size, 0), dtype=bool)
        for bits in sorted({tuple(k) for k in keys}, reverse=True):
            mask = np.all(keys == np.array(bits, dtype=bool), axis=1) if given else np.ones(size, bool)
            ev = SelectionEvent.always(d)
            for g, b in zip(given, bits):
                ev = ev.conjoin(gates[g] if b else _negate(gates[g]))
            th = est[mask]
            se = math.sqrt(sigma[j, j] / n)
            methods = {"wald": _wald(th[:, j], se, crit, sided)}
            for dn in deltas:
                methods[conditional_method_name(dn, deltas)] = _cond_rows(
                    ev, th, np.broadcast_to(sigma, (len(th), d, d)), n, j, theta[j], alpha, sided, dn
                )
            pattern = ",".join("S" if b else "N" for b in bits) or "-"
            frames.append(_frame(rep[mask], t.get("name", f"theta{j + 1}"), pattern, theta[j], th[:, j], se, methods))
    return pd.concat(frames, ignore_index=True), size


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------


def _pooled_setting3(p):
    return (PooledRow("theta2", "-,-"), PooledRow("theta3", "-,-"))


def _pooled_setting4(p):
    return tuple(
        row
        for param in ("theta_p", "theta_s")
        for row in (PooledRow(param, "N,-", ("N,S", "N,N")), PooledRow(param, "-,-"))
    )


def _pooled_example2(p):
    return (PooledRow("theta0", "all"),)


GENERATORS: dict[str, ScenarioKernel] = {
    "example1": ScenarioKernel(
        "example1",
        _block_example1,
        {"gate": 1.64, "wald_crit": 1.64, "theta": [0.0, 0.0, 0.0]},
        until_selected=False,
        block_size=100_000,
        sided="lower",
        pool_all_params=True,
        description="three correlated normal estimates tested in a fixed hierarchy",
    ),
    "example2": ScenarioKernel(
        "example2",
        _block_example2,
        {"theta0": 0.75, "futility": 0.5, "efficacy": 2.5, "final": 2.02 / SQRT2},
        until_selected=False,
        block_size=100_000,
        sided="two",
        pooled=_pooled_example2,
        description="interim/final analysis with futility and efficacy stopping",
    ),
    "setting1": ScenarioKernel(
        "setting1",
        _block_setting1,
        {"n": 100, "rho": 0.4, "screen_z": 1.96, "mixing": "unit"},
        until_selected=True,
        block_size=2_000,
        sided="two",
        description="t4 means, secondary reported when the primary is significant",
    ),
    "setting2": ScenarioKernel(
        "setting2",
        _block_setting2,
        {"n": 400, "B": 10_000, "screen_z": 1.96},
        until_selected=True,
        block_size=100,
        sided="two",
        description="Cox log hazard ratios for OS (primary) and PFS (secondary), bootstrap covariance",
    ),
    "setting3": ScenarioKernel(
        "setting3",
        _block_setting3,
        {"n": 100, "theta": [0.0, 0.0, 0.0], "gate_z": 1.96, "covariance": "analytic", "B": 10_000},
        until_selected=False,
        block_size=5_000,
        sided="two",
        pooled=_pooled_setting3,
        description="three t4 means tested hierarchically",
    ),
    "setting4": ScenarioKernel(
        "setting4",
        _block_setting4,
        {"theta_p": 0.0, "theta_s": 0.0, "design_alpha": 0.05},
        until_selected=False,
        block_size=5_000,
        sided="lower",
        pooled=_pooled_setting4,
        description="two-look group-sequential trial with a correlated secondary outcome",
    ),
    "gaussian": ScenarioKernel(
        "gaussian",
        _block_gaussian,
        {"theta": [0.0], "sigma": [[1.0]], "n": 1, "sided": "two", "gates": [], "targets": []},
        until_selected=False,
        block_size=20_000,
        sided="two",
        description="user-defined Gaussian estimates with gate events",
    ),
}
