"""Stable normal, bivariate-normal and union-truncated-normal numerics.

Everything that touches a tail probability goes through ``log_ndtr`` so that
regions sitting 10+ standard deviations away from the mean keep their
relative precision.  Truncation regions are finite unions of disjoint
intervals (:class:`IntervalUnion`); their mass is summed per component in
log space.

Two flavours of most routines exist: scalar functions taking
:class:`TruncatedNormal`/:class:`IntervalUnion` objects, and ``*_batch``
functions taking padded ``(N, K)`` endpoint arrays, used by the Monte Carlo
engine.  Empty padding components are encoded as ``lo >= hi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import expit, log_ndtr, logsumexp, ndtr, ndtri, ndtri_exp

__all__ = [
    "DegenerateTruncationError",
    "IntervalUnion",
    "TruncatedNormal",
    "UNBOUNDED_CAP",
    "bvn_upper_orthant",
    "log_interval_mass",
    "log_normal_tail",
    "solve_mean",
    "solve_mean_batch",
    "std_normal_cdf",
    "trunc_cdf",
    "trunc_cdf_batch",
    "trunc_quantile",
]

#: Bracket cap for :func:`solve_mean`, in units of sigma away from ``x``.
UNBOUNDED_CAP = 1000.0

_LOG_HALF = math.log(0.5)
_LN2 = math.log(2.0)


class DegenerateTruncationError(ArithmeticError):
    """The truncation region carries no probability mass, even in log space."""

    def __init__(self, message: str, log_mass: float = -math.inf):
        super().__init__(f"degenerate truncation: {message} (log mass {log_mass})")
        self.log_mass = log_mass


# ---------------------------------------------------------------------------
# interval unions
# ---------------------------------------------------------------------------


def _normalize(pieces: Iterable[tuple[float, float]]) -> tuple[tuple[float, float], ...]:
    kept = sorted((float(lo), float(hi)) for lo, hi in pieces if lo < hi)
    merged: list[list[float]] = []
    for lo, hi in kept:
        if merged and lo <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return tuple((lo, hi) for lo, hi in merged)


@dataclass(frozen=True)
class IntervalUnion:
    """Finite union of disjoint open/closed-agnostic real intervals.

    Endpoints may be ``±inf``.  Construction sorts the pieces, drops empty
    ones and merges overlapping or touching neighbours, so two unions
    describing the same set compare equal.
    """

    intervals: tuple[tuple[float, float], ...]

    def __init__(self, intervals: Iterable[Sequence[float]]):
        pieces = []
        for piece in intervals:
            lo, hi = float(piece[0]), float(piece[1])
            if math.isnan(lo) or math.isnan(hi):
                raise ValueError("interval endpoints must not be NaN")
            if not lo < hi:
                raise ValueError(f"interval ({lo}, {hi}) is empty; need lo < hi")
            pieces.append((lo, hi))
        if not pieces:
            raise ValueError("IntervalUnion needs at least one interval")
        object.__setattr__(self, "intervals", _normalize(pieces))

    @classmethod
    def real_line(cls) -> "IntervalUnion":
        return cls([(-math.inf, math.inf)])

    @classmethod
    def from_pieces(cls, pieces: Iterable[Sequence[float]]) -> "IntervalUnion | None":
        """Build from possibly-empty pieces; ``None`` if nothing is left."""
        kept = [(float(lo), float(hi)) for lo, hi in pieces if lo < hi]
        return cls(kept) if kept else None

    def __iter__(self):
        return iter(self.intervals)

    def __len__(self) -> int:
        return len(self.intervals)

    @property
    def is_real_line(self) -> bool:
        return self.intervals == ((-math.inf, math.inf),)

    @property
    def endpoints(self) -> list[float]:
        """Finite endpoints, ascending."""
        return [e for piece in self.intervals for e in piece if math.isfinite(e)]

    def contains(self, x: float) -> bool:
        # closure membership: the boundary itself has probability zero
        return any(lo <= x <= hi for lo, hi in self.intervals)

    def union(self, other: "IntervalUnion") -> "IntervalUnion":
        return IntervalUnion(self.intervals + other.intervals)

    def intersect(self, other: "IntervalUnion") -> "IntervalUnion | None":
        pieces = [
            (max(a, c), min(b, d))
            for a, b in self.intervals
            for c, d in other.intervals
        ]
        return IntervalUnion.from_pieces(pieces)

    def as_arrays(self, width: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """``(lo, hi)`` arrays padded with empty ``(+inf, +inf)`` pieces."""
        k = len(self.intervals) if width is None else width
        if k < len(self.intervals):
            raise ValueError("width smaller than number of intervals")
        lo = np.full(k, np.inf)
        hi = np.full(k, np.inf)
        for j, (a, b) in enumerate(self.intervals):
            lo[j], hi[j] = a, b
        return lo, hi

    def to_list(self) -> list[list[float]]:
        return [[lo, hi] for lo, hi in self.intervals]

    def __str__(self) -> str:
        def fmt(v: float) -> str:
            return "inf" if v == math.inf else "-inf" if v == -math.inf else f"{v:.6g}"

        return " U ".join(f"({fmt(lo)}, {fmt(hi)})" for lo, hi in self.intervals)


@dataclass(frozen=True)
class TruncatedNormal:
    """``N(mu, sigma^2)`` restricted to ``region``."""

    mu: float
    sigma: float
    region: IntervalUnion

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValueError(f"sigma must be positive and finite, got {self.sigma}")
        if not math.isfinite(self.mu):
            raise ValueError(f"mu must be finite, got {self.mu}")
        lm = self.log_mass()
        if not lm > -math.inf:
            raise DegenerateTruncationError(f"region {self.region} under N({self.mu}, {self.sigma}^2)", lm)

    def log_mass(self) -> float:
        lo, hi = self.region.as_arrays()
        a = (lo - self.mu) / self.sigma
        b = (hi - self.mu) / self.sigma
        return float(logsumexp(log_interval_mass(a, b)))


# ---------------------------------------------------------------------------
# univariate normal
# ---------------------------------------------------------------------------


def std_normal_cdf(z: float) -> float:
    """Standard normal CDF."""
    z = float(z)
    if math.isnan(z):
        raise ValueError("std_normal_cdf of NaN")
    return float(ndtr(z))


def log_normal_tail(z: float) -> float:
    """``log(1 - Phi(z))`` without cancellation or underflow."""
    z = float(z)
    if math.isnan(z):
        raise ValueError("log_normal_tail of NaN")
    return float(log_ndtr(-z))


def _log1mexp(d: np.ndarray) -> np.ndarray:
    """``log(1 - exp(d))`` for ``d <= 0``."""
    d = np.asarray(d, dtype=float)
    out = np.empty_like(d)
    near = d > -_LN2
    with np.errstate(divide="ignore"):
        out[near] = np.log(-np.expm1(d[near]))
        out[~near] = np.log1p(-np.exp(d[~near]))
    return out


def log_interval_mass(a, b) -> np.ndarray:
    """Elementwise ``log(Phi(b) - Phi(a))`` for standardized endpoints.

    Returns ``-inf`` wherever ``a >= b``.  Pieces lying wholly in one tail are
    evaluated from that tail's log-CDF, so a piece 40 sigma out keeps full
    relative precision.
    """
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    out = np.full(a.shape, -np.inf)
    valid = a < b
    upper = valid & (a >= 0)
    lower = valid & (b <= 0) & ~upper
    middle = valid & ~upper & ~lower

    with np.errstate(invalid="ignore"):
        if upper.any():
            la = log_ndtr(-a[upper])
            lb = log_ndtr(-b[upper])
            out[upper] = np.where(np.isneginf(la), -np.inf, la + _log1mexp(lb - la))
        if lower.any():
            la = log_ndtr(a[lower])
            lb = log_ndtr(b[lower])
            out[lower] = np.where(np.isneginf(lb), -np.inf, lb + _log1mexp(la - lb))
    if middle.any():
        with np.errstate(divide="ignore"):
            out[middle] = np.log(ndtr(b[middle]) - ndtr(a[middle]))
    return out


# ---------------------------------------------------------------------------
# bivariate normal orthant
# ---------------------------------------------------------------------------

# Drezner-Wesolowsky with Genz's refinements: 6/12/20-point Gauss-Legendre
# by |rho| band, and an asymptotic expansion plus 20-point rule for |rho| >= 0.925.
_GL = {n: leggauss(n) for n in (6, 12, 20)}


def bvn_upper_orthant(h: float, k: float, rho: float) -> float:
    """``P(Z1 > h, Z2 > k)`` for a standard bivariate normal with correlation ``rho``.

    Gauss-Legendre quadrature on Plackett's correlation integral: 6 nodes for
    ``|rho| < 0.3``, 12 for ``|rho| < 0.75`` and 20 otherwise; for
    ``|rho| >= 0.925`` the singular part is removed analytically before
    integrating with 20 nodes.  Absolute error is below 1e-14 in double
    precision.
    """
    h, k, rho = float(h), float(k), float(rho)
    if any(math.isnan(v) for v in (h, k, rho)):
        raise ValueError("bvn_upper_orthant of NaN")
    if not abs(rho) < 1:
        raise ValueError(f"|rho| must be < 1, got {rho}")
    if h == math.inf or k == math.inf:
        return 0.0
    if h == -math.inf:
        return 1.0 if k == -math.inf else float(ndtr(-k))
    if k == -math.inf:
        return float(ndtr(-h))
    if rho == 0:
        return float(ndtr(-h) * ndtr(-k))

    ar = abs(rho)
    nodes, weights = _GL[6 if ar < 0.3 else 12 if ar < 0.75 else 20]
    x = 1.0 + nodes  # nodes on (0, 2)
    hk = h * k

    if ar < 0.925:
        hs = (h * h + k * k) / 2.0
        asr = math.asin(rho) / 2.0
        sn = np.sin(asr * x)
        bvn = float(np.dot(weights, np.exp((sn * hk - hs) / (1.0 - sn * sn))))
        bvn = bvn * asr / (2.0 * math.pi) + float(ndtr(-h) * ndtr(-k))
        return min(1.0, max(0.0, bvn))

    if rho < 0:
        k = -k
        hk = -hk
    aas = (1.0 - rho) * (1.0 + rho)
    a = math.sqrt(aas)
    bs = (h - k) ** 2
    c = (4.0 - hk) / 8.0
    d = (12.0 - hk) / 16.0
    bvn = 0.0
    asr = -(bs / aas + hk) / 2.0
    if asr > -100:
        bvn = a * math.exp(asr) * (
            1.0 - c * (bs - aas) * (1.0 - d * bs / 5.0) / 3.0 + c * d * aas * aas / 5.0
        )
    if -hk < 100:
        b = math.sqrt(bs)
        sp = math.sqrt(2.0 * math.pi) * float(ndtr(-b / a))
        bvn -= math.exp(-hk / 2.0) * sp * b * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0)
    a /= 2.0
    xs = (a * x) ** 2
    asr_v = -(bs / xs + hk) / 2.0
    keep = asr_v > -100
    xs, asr_v, w = xs[keep], asr_v[keep], weights[keep]
    rs = np.sqrt(1.0 - xs)
    sp = 1.0 + c * xs * (1.0 + d * xs)
    ep = np.exp(-hk * (1.0 - rs) / (2.0 * (1.0 + rs))) / rs
    bvn += a * float(np.dot(w, np.exp(asr_v) * (ep - sp)))
    bvn = -bvn / (2.0 * math.pi)

    if rho > 0:
        bvn += float(ndtr(-max(h, k)))
    else:
        bvn = -bvn + max(0.0, float(ndtr(-h) - ndtr(-k)))
    return min(1.0, max(0.0, bvn))


# ---------------------------------------------------------------------------
# truncated normal: batch kernels
# ---------------------------------------------------------------------------


def _as_2d(lo, hi) -> tuple[np.ndarray, np.ndarray]:
    lo = np.atleast_2d(np.asarray(lo, dtype=float))
    hi = np.atleast_2d(np.asarray(hi, dtype=float))
    if lo.shape != hi.shape:
        raise ValueError("lo and hi must have the same shape")
    return lo, hi


def _log_split_masses(x, mu, sigma, lo, hi) -> tuple[np.ndarray, np.ndarray]:
    """Log masses of ``region ∩ (-inf, x]`` and ``region ∩ [x, inf)``."""
    x = np.asarray(x, dtype=float)[:, None]
    mu = np.asarray(mu, dtype=float)[:, None]
    sigma = np.asarray(sigma, dtype=float)[:, None]
    a = (lo - mu) / sigma
    b = (hi - mu) / sigma
    z = (x - mu) / sigma
    log_below = logsumexp(log_interval_mass(a, np.minimum(b, z)), axis=1)
    log_above = logsumexp(log_interval_mass(np.maximum(a, z), b), axis=1)
    return log_below, log_above


def trunc_cdf_batch(x, mu, sigma, lo, hi) -> np.ndarray:
    """Vectorised truncated-normal CDF.

    ``x``, ``mu``, ``sigma`` broadcast to shape ``(N,)``; ``lo``/``hi`` are
    ``(N, K)`` component endpoints (``(K,)`` is broadcast to every row).
    Computed as ``expit(log_below - log_above)`` so that neither tail of the
    answer loses precision.
    """
    lo, hi = _as_2d(lo, hi)
    x, mu, sigma = np.broadcast_arrays(
        np.atleast_1d(np.asarray(x, dtype=float)),
        np.atleast_1d(np.asarray(mu, dtype=float)),
        np.atleast_1d(np.asarray(sigma, dtype=float)),
    )
    n = max(x.shape[0], lo.shape[0])
    x, mu, sigma = (np.broadcast_to(v, (n,)) for v in (x, mu, sigma))
    lo, hi = np.broadcast_to(lo, (n, lo.shape[1])), np.broadcast_to(hi, (n, hi.shape[1]))
    log_below, log_above = _log_split_masses(x, mu, sigma, lo, hi)
    dead = np.isneginf(log_below) & np.isneginf(log_above)
    if dead.any():
        i = int(np.flatnonzero(dead)[0])
        raise DegenerateTruncationError(
            f"row {i}: mu={mu[i]}, sigma={sigma[i]}, lo={lo[i].tolist()}, hi={hi[i].tolist()}"
        )
    with np.errstate(invalid="ignore"):
        diff = log_below - log_above
    out = expit(diff)
    # no truncation: return Phi itself rather than a log-space reconstruction
    free = np.any(np.isneginf(lo) & np.isposinf(hi), axis=1)
    if free.any():
        out[free] = ndtr((x[free] - mu[free]) / sigma[free])
    return out


def solve_mean_batch(
    x,
    sigma,
    lo,
    hi,
    target,
    *,
    cap: float = UNBOUNDED_CAP,
    xtol: float = 1e-11,
    max_iter: int = 200,
) -> np.ndarray:
    """Vectorised root of ``trunc_cdf(x; mu, sigma, region) = target`` in ``mu``.

    The CDF is strictly decreasing in ``mu``, so the root is bracketed from
    ``x ± 10 sigma`` outward (doubling) and bisected down to ``xtol * sigma``.
    Rows whose root lies beyond ``x ± cap * sigma`` come back as ``∓inf``.
    """
    lo, hi = _as_2d(lo, hi)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = max(x.shape[0], lo.shape[0])
    x = np.broadcast_to(x, (n,)).copy()
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (n,)).copy()
    target = np.broadcast_to(np.asarray(target, dtype=float), (n,)).copy()
    lo, hi = np.broadcast_to(lo, (n, lo.shape[1])), np.broadcast_to(hi, (n, hi.shape[1]))
    if np.any((target <= 0) | (target >= 1)):
        raise ValueError("target must lie strictly inside (0, 1)")
    if np.any(~(sigma > 0)):
        raise ValueError("sigma must be positive")

    def f(mu, rows):
        return trunc_cdf_batch(x[rows], mu, sigma[rows], lo[rows], hi[rows]) - target[rows]

    result = np.full(n, np.nan)
    everything = np.arange(n)

    # lower bracket end: need f > 0 (cdf above target)
    step = np.full(n, 10.0)
    left = x - step * sigma
    todo = everything
    while todo.size:
        ok = f(left[todo], todo) > 0
        todo = todo[~ok]
        if not todo.size:
            break
        exhausted = step[todo] >= cap
        result[todo[exhausted]] = -np.inf
        todo = todo[~exhausted]
        step[todo] = np.minimum(step[todo] * 2.0, cap)
        left[todo] = x[todo] - step[todo] * sigma[todo]

    step = np.full(n, 10.0)
    right = x + step * sigma
    todo = everything[~np.isneginf(result)]
    while todo.size:
        ok = f(right[todo], todo) < 0
        todo = todo[~ok]
        if not todo.size:
            break
        exhausted = step[todo] >= cap
        result[todo[exhausted]] = np.inf
        todo = todo[~exhausted]
        step[todo] = np.minimum(step[todo] * 2.0, cap)
        right[todo] = x[todo] + step[todo] * sigma[todo]

    todo = everything[np.isnan(result)]
    a, b = left[todo], right[todo]
    for _ in range(max_iter):
        if not todo.size:
            break
        mid = 0.5 * (a + b)
        above = f(mid, todo) > 0
        a = np.where(above, mid, a)
        b = np.where(above, b, mid)
        done = (b - a) <= xtol * sigma[todo]
        if done.any():
            result[todo[done]] = 0.5 * (a[done] + b[done])
            todo, a, b = todo[~done], a[~done], b[~done]
    if todo.size:
        result[todo] = 0.5 * (a + b)
    return result


# ---------------------------------------------------------------------------
# truncated normal: scalar front-ends
# ---------------------------------------------------------------------------


def trunc_cdf(x: float, tn: TruncatedNormal) -> float:
    """CDF of ``tn`` at ``x``: region mass below ``x`` over total region mass."""
    x = float(x)
    if math.isnan(x):
        raise ValueError("trunc_cdf of NaN")
    lo, hi = tn.region.as_arrays()
    return float(trunc_cdf_batch(x, tn.mu, tn.sigma, lo, hi)[0])


def trunc_quantile(u: float, tn: TruncatedNormal) -> float:
    """Inverse of :func:`trunc_cdf`; the result always lies inside the region."""
    u = float(u)
    if not 0 < u < 1:
        raise ValueError(f"u must lie in (0, 1), got {u}")
    lo, hi = tn.region.as_arrays()
    a = (lo - tn.mu) / tn.sigma
    b = (hi - tn.mu) / tn.sigma
    logm = log_interval_mass(a, b)
    log_total = logsumexp(logm)
    # pick the component holding the u-quantile, then invert inside it
    cum = np.exp(np.logaddexp.accumulate(logm) - log_total)
    j = int(min(np.searchsorted(cum, u), len(cum) - 1))
    while logm[j] == -np.inf:
        j -= 1
    prev = cum[j - 1] if j > 0 else 0.0
    q = min(max((u - prev) / (cum[j] - prev if cum[j] > prev else 1.0), 0.0), 1.0)
    aj, bj = a[j], b[j]
    if aj >= 0:
        # upper tail: solve log Q(z) = log Q(a) + log(1 - q (1 - Q(b)/Q(a)))
        la, lb = log_ndtr(-aj), log_ndtr(-bj)
        frac = q * -np.expm1(lb - la)
        z = -float(ndtri_exp(la + np.log1p(-frac))) if frac < 1 else bj
    elif bj <= 0:
        la, lb = log_ndtr(aj), log_ndtr(bj)
        frac = (1 - q) * -np.expm1(la - lb)
        z = float(ndtri_exp(lb + np.log1p(-frac))) if frac < 1 else aj
    else:
        z = float(ndtri(ndtr(aj) + q * (ndtr(bj) - ndtr(aj))))
    z = min(max(z, aj), bj)
    x = tn.mu + tn.sigma * z
    return _polish_quantile(u, x, tn, lo[j], hi[j])


def _polish_quantile(u: float, x: float, tn: TruncatedNormal, lo_j: float, hi_j: float) -> float:
    # a few bisection-safeguarded Newton steps inside the chosen component
    a = lo_j if math.isfinite(lo_j) else x - 50 * tn.sigma
    b = hi_j if math.isfinite(hi_j) else x + 50 * tn.sigma
    for _ in range(60):
        err = trunc_cdf(x, tn) - u
        if abs(err) <= 1e-13:
            break
        if err > 0:
            b = min(b, x)
        else:
            a = max(a, x)
        z = (x - tn.mu) / tn.sigma
        log_dens = -0.5 * z * z - 0.5 * math.log(2 * math.pi) - math.log(tn.sigma) - tn.log_mass()
        step = err / math.exp(log_dens) if log_dens > -700 else math.inf
        nxt = x - step
        x = nxt if a < nxt < b else 0.5 * (a + b)
        if b - a <= 1e-15 * max(1.0, abs(x)):
            break
    return x


def solve_mean(
    x: float,
    sigma: float,
    region: IntervalUnion,
    target_u: float,
    *,
    cap: float = UNBOUNDED_CAP,
) -> float:
    """Mean ``mu`` at which the truncated CDF at ``x`` equals ``target_u``.

    Returns ``±inf`` when no root exists within ``cap`` sigma of ``x`` (an
    unbounded confidence endpoint).
    """
    if not 0 < target_u < 1:
        raise ValueError(f"target_u must lie in (0, 1), got {target_u}")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    lo, hi = region.as_arrays()
    return float(solve_mean_batch(float(x), sigma, lo, hi, target_u, cap=cap)[0])
