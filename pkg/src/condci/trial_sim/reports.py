"""Coverage, width, power and pivot-uniformity summaries of simulation records."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
from scipy.stats import kstest

from .scenarios import PooledRow

__all__ = [
    "ReportTable",
    "coverage_report",
    "ell1_uniformity",
    "report_for",
]


def ell1_uniformity(pivots: Sequence[float], M: int = 10_000) -> float:
    """Mean absolute gap between the empirical CDF of ``pivots`` and ``U(0, 1)``.

    The gap is averaged over the grid ``u_l = (l - 1) / (M - 1)``,
    ``l = 1..M``.
    """
    p = np.sort(np.asarray(pivots, dtype=float))
    if p.size == 0:
        raise ValueError("need at least one pivot value")
    if M < 2:
        raise ValueError("M must be at least 2")
    u = np.linspace(0.0, 1.0, M)
    ecdf = np.searchsorted(p, u, side="right") / p.size
    return float(np.mean(np.abs(u - ecdf)))


def _robust_median(w: np.ndarray) -> float:
    finite = w[np.isfinite(w)]
    if finite.size * 2 > w.size:
        return float(np.median(finite))
    return math.inf


def _robust_iqr(w: np.ndarray) -> float:
    finite = w[np.isfinite(w)]
    if finite.size * 2 > w.size:
        q75, q25 = np.percentile(finite, [75, 25])
        return float(q75 - q25)
    return math.inf


def _methods_in(records: pd.DataFrame) -> list[str]:
    return [c[: -len("_lower")] for c in records.columns if c.endswith("_lower")]


def _group_stats(g: pd.DataFrame, methods: list[str], baseline: str | None, ell1_M: int) -> dict:
    out: dict = {"count": len(g)}
    for m in methods:
        lo = g[f"{m}_lower"].to_numpy()
        hi = g[f"{m}_upper"].to_numpy()
        truth = g["truth"].to_numpy()
        with np.errstate(invalid="ignore"):
            width = hi - lo
        out[f"{m}_cov"] = float(np.mean((lo <= truth) & (truth <= hi)))
        out[f"{m}_width_med"] = _robust_median(width)
        out[f"{m}_width_iqr"] = _robust_iqr(width)
        out[f"{m}_power"] = float(np.mean((lo > 0) | (hi < 0)))
        out[f"{m}_lbv"] = float(np.median(lo))
        piv_col = f"{m}_pivot"
        if piv_col in g:
            piv = g[piv_col].to_numpy()
            out[f"{m}_ell1"] = ell1_uniformity(piv, ell1_M)
            out[f"{m}_ks"] = float(kstest(piv, "uniform").statistic)
            out[f"{m}_ks_p"] = float(kstest(piv, "uniform").pvalue)
        if baseline is not None and m != baseline:
            base_w = g[f"{baseline}_upper"].to_numpy() - g[f"{baseline}_lower"].to_numpy()
            with np.errstate(invalid="ignore", divide="ignore"):
                ratio = width / base_w
            ratio = np.where(np.isnan(ratio), 1.0, ratio)  # inf/inf: same unbounded interval
            out[f"{m}_ratio_med"] = _robust_median(ratio)
            out[f"{m}_ratio_iqr"] = _robust_iqr(ratio)
    return out


@dataclass
class ReportTable:
    """Rows keyed by ``(param, pattern)`` with per-method summary columns."""

    table: pd.DataFrame
    methods: list[str]
    meta: dict = field(default_factory=dict)

    def row(self, param: str, pattern: str) -> pd.Series:
        hit = self.table[(self.table["param"] == param) & (self.table["pattern"] == pattern)]
        if hit.empty:
            raise KeyError(f"no report row for ({param}, {pattern})")
        return hit.iloc[0]

    def value(self, param: str, pattern: str, column: str) -> float:
        return float(self.row(param, pattern)[column])

    def to_csv(self, path=None) -> str | None:
        text = self.table.to_csv(index=False, float_format="%.10g", lineterminator="\n")
        if path is None:
            return text
        with open(path, "w", newline="") as fh:
            fh.write(text)
        return None

    @classmethod
    def from_csv(cls, source) -> "ReportTable":
        if isinstance(source, str) and "\n" in source:
            source = io.StringIO(source)
        df = pd.read_csv(source, keep_default_na=False, na_values=[""])
        df["param"] = df["param"].astype(str)
        df["pattern"] = df["pattern"].astype(str)
        methods = sorted({c[: -len("_cov")] for c in df.columns if c.endswith("_cov")})
        return cls(df, methods)

    def to_text(self, columns: Sequence[str] | None = None) -> str:
        """Aligned plain-text rendering with three decimals."""
        df = self.table
        if columns is None:
            columns = ["param", "pattern", "freq"]
            for m in self.methods:
                columns += [f"{m}_cov", f"{m}_width_med", f"{m}_power"]
                if f"{m}_ell1" in df:
                    columns.append(f"{m}_ell1")
                if f"{m}_ratio_med" in df:
                    columns.append(f"{m}_ratio_med")
        cols = [c for c in columns if c in df]

        def fmt(v):
            if isinstance(v, (float, np.floating)):
                return "inf" if v == math.inf else "-inf" if v == -math.inf else f"{v:.3f}"
            return str(v)

        cells = [cols] + [[fmt(df.iloc[i][c]) for c in cols] for i in range(len(df))]
        widths = [max(len(r[j]) for r in cells) for j in range(len(cols))]
        lines = ["  ".join(r[j].rjust(widths[j]) if j >= 2 else r[j].ljust(widths[j]) for j in range(len(cols))) for r in cells]
        lines.insert(1, "  ".join("-" * w for w in widths))
        header = []
        for k, v in self.meta.items():
            header.append(f"# {k}: {v}")
        return "\n".join(header + lines) + "\n"


def coverage_report(
    records: pd.DataFrame,
    n_replicates: int | None = None,
    pooled: Iterable[PooledRow] = (),
    pool_all_params: bool = False,
    baseline: str | None = "wald",
    ell1_M: int = 10_000,
    meta: dict | None = None,
) -> ReportTable:
    """Summarise records per ``(param, pattern)``.

    Parameters
    ----------
    records
        Long-format records (see :mod:`condci.trial_sim.scenarios`).
    n_replicates
        Denominator for the ``freq`` column; defaults to the number of
        distinct replicates in ``records``.
    pooled
        Extra rows merging several patterns of one parameter.
    pool_all_params
        Add an ``("all", "pooled")`` row over every record.
    baseline
        Method the width ratios are taken against.

    Notes
    -----
    Power is the fraction of intervals excluding zero.  Median and IQR of
    widths ignore infinite widths when more than half are finite, and are
    ``inf`` otherwise.
    """
    methods = _methods_in(records)
    if baseline not in methods:
        baseline = None
    if n_replicates is None:
        n_replicates = records["rep"].nunique()
    rows = []
    for (param, pattern), g in records.groupby(["param", "pattern"], sort=True):
        rows.append({"param": param, "pattern": pattern, **_group_stats(g, methods, baseline, ell1_M)})
    for pr in pooled:
        g = records[records["param"] == pr.param]
        if pr.patterns is not None:
            g = g[g["pattern"].isin(pr.patterns)]
        if len(g):
            rows.append({"param": pr.param, "pattern": pr.label, **_group_stats(g, methods, baseline, ell1_M)})
    if pool_all_params and len(records):
        rows.append({"param": "all", "pattern": "pooled", **_group_stats(records, methods, baseline, ell1_M)})
    table = pd.DataFrame(rows)
    if len(table):
        table.insert(2, "freq", table["count"] / n_replicates)
    return ReportTable(table, methods, dict(meta or {}))


def report_for(result, ell1_M: int = 10_000) -> ReportTable:
    """:func:`coverage_report` with the scenario's own pooled rows and metadata."""
    sc = result.scenario
    meta = {
        "scenario": sc.label or sc.name,
        "seed": sc.seed,
        "replicates": result.n_replicates,
        "attempts": result.attempts,
        "alpha": sc.alpha,
    }
    return coverage_report(
        result.records,
        n_replicates=result.n_replicates,
        pooled=sc.kernel.pooled(sc.params),
        pool_all_params=sc.kernel.pool_all_params,
        ell1_M=ell1_M,
        meta=meta,
    )
