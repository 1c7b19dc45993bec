"""Rank tests, rank-biserial effect sizes and the Shapiro-Wilk W test.

Exact null distributions are built by dynamic programming over doubled
midranks, which keeps them exact in the presence of ties.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import rankdata

from .errors import (
    AllZeroDifferences,
    DegenerateSample,
    EmptySample,
    LengthMismatch,
    OutOfRangeStatistic,
    TooFewSamples,
    TooManySamples,
    ZeroRankSum,
)

WILCOXON_EXACT_MAX_N = 25
MANN_WHITNEY_EXACT_MAX_PRODUCT = 400


@dataclass
class TestReport:
    test: str
    statistic: float
    p_value: float
    effect_size: float | None = None
    n: int = 0
    n1: int | None = None
    n2: int | None = None
    method: str = "approx"
    statistic_kind: str = ""
    n_zero: int = 0
    n_tie_groups: int = 0
    extra: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class


def _two_sided(counts: np.ndarray, observed: int) -> float:
    """Two-sided p from an integer-indexed null count table."""
    total = counts.sum()
    lower = counts[: observed + 1].sum()
    upper = counts[observed:].sum()
    return float(min(1.0, 2.0 * min(lower, upper) / total))


def _tie_groups(values: np.ndarray) -> np.ndarray:
    _, counts = np.unique(values, return_counts=True)
    return counts[counts > 1]


# ---------------------------------------------------------------------------
# effect sizes


def effect_size_paired(u: float, n1: int, n2: int) -> float:
    """r = 2f - 1 with f = U / (n1 n2)."""
    if n1 < 1 or n2 < 1:
        raise OutOfRangeStatistic("sample sizes must be positive")
    if not 0 <= u <= n1 * n2:
        raise OutOfRangeStatistic(f"U={u} outside [0, {n1 * n2}]")
    f = u / (n1 * n2)
    return f - (1.0 - f)


def effect_size_unpaired(t: float, s: float) -> float:
    """r = T / S."""
    if s == 0:
        raise ZeroRankSum("rank sum S is zero")
    return t / s


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank


def _signed_rank_null(doubled_ranks: np.ndarray) -> np.ndarray:
    """Counts of 2*W+ over all 2^n sign assignments."""
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled_ranks:
        r = int(r)
        shifted = counts[: total + 1 - r].copy()
        counts[r:] += shifted
    return counts


def wilcoxon_signed_rank(a, b, exact_max_n: int = WILCOXON_EXACT_MAX_N, method: str = "auto") -> TestReport:
    """Paired two-sided Wilcoxon signed-rank test.

    Zero differences are discarded.  The statistic is min(W+, W-).  ``method``
    is ``"exact"``, ``"approx"`` (normal with tie and continuity correction)
    or ``"auto"`` (exact when at most ``exact_max_n`` nonzero differences).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise LengthMismatch(f"paired samples differ in shape: {a.shape} vs {b.shape}")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise ValueError("samples must be finite")
    d = a - b
    n_zero = int((d == 0).sum())
    d = d[d != 0]
    n = d.size
    if n == 0:
        raise AllZeroDifferences("every paired difference is zero")
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    total = n * (n + 1) / 2
    w_minus = total - w_plus
    stat = min(w_plus, w_minus)
    ties = _tie_groups(np.abs(d))

    if method == "auto":
        method = "exact" if n <= exact_max_n else "approx"
    if method == "exact":
        doubled = np.rint(2 * ranks).astype(np.int64)
        p = _two_sided(_signed_rank_null(doubled), int(round(2 * w_plus)))
    elif method == "approx":
        mean = total / 2
        var = n * (n + 1) * (2 * n + 1) / 24 - (ties**3 - ties).sum() / 48
        dev = stat - mean
        dev -= 0.5 * np.sign(dev)
        p = float(min(1.0, 2.0 * ndtr(-abs(dev) / math.sqrt(var)))) if var > 0 else 1.0
    else:
        raise ValueError(f"unknown method {method!r}")

    return TestReport(
        test="Wilcoxon",
        statistic=stat,
        p_value=p,
        effect_size=effect_size_paired(stat, n, n),
        n=n,
        n1=n,
        n2=n,
        method=method,
        statistic_kind="min(W+,W-)",
        n_zero=n_zero,
        n_tie_groups=int(ties.size),
        extra={
            "w_plus": w_plus,
            "w_minus": w_minus,
            "rank_sum": total,
            "rank_biserial": (w_plus - w_minus) / total,
        },
    )


# ---------------------------------------------------------------------------
# Mann-Whitney U


def _rank_sum_null(doubled_ranks: np.ndarray, k: int) -> np.ndarray:
    """Counts of the doubled rank sum over all k-subsets of the pooled ranks."""
    total = int(np.sort(doubled_ranks)[::-1][:k].sum())
    ways = np.zeros((k + 1, total + 1), dtype=np.int64)
    ways[0, 0] = 1
    for i, r in enumerate(doubled_ranks):
        r = int(r)
        for j in range(min(i + 1, k), 0, -1):
            if r <= total:
                ways[j, r:] += ways[j - 1, : total + 1 - r]
    return ways[k]


def mann_whitney_u(a, b, exact_max_product: int = MANN_WHITNEY_EXACT_MAX_PRODUCT, method: str = "auto") -> TestReport:
    """Two-sided Mann-Whitney U test; the statistic is U of the first sample."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n1, n2 = a.size, b.size
    if n1 == 0 or n2 == 0:
        raise EmptySample("both samples must be non-empty")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise ValueError("samples must be finite")
    pooled = np.concatenate([a, b])
    ranks = rankdata(pooled)
    r1 = float(ranks[:n1].sum())
    u1 = r1 - n1 * (n1 + 1) / 2
    u2 = n1 * n2 - u1
    ties = _tie_groups(pooled)
    N = n1 + n2

    if method == "auto":
        method = "exact" if n1 * n2 <= exact_max_product else "approx"
    if method == "exact":
        doubled = np.rint(2 * ranks).astype(np.int64)
        # enumerate subsets of the smaller sample
        if n1 <= n2:
            counts = _rank_sum_null(doubled, n1)
            observed = int(round(2 * r1))
        else:
            counts = _rank_sum_null(doubled, n2)
            observed = int(round(2 * float(ranks[n1:].sum())))
        p = _two_sided(counts, observed)
    elif method == "approx":
        mean = n1 * n2 / 2
        var = n1 * n2 / 12 * ((N + 1) - (ties**3 - ties).sum() / (N * (N - 1)))
        dev = u1 - mean
        dev -= 0.5 * np.sign(dev)
        p = float(min(1.0, 2.0 * ndtr(-abs(dev) / math.sqrt(var)))) if var > 0 else 1.0
    else:
        raise ValueError(f"unknown method {method!r}")

    return TestReport(
        test="Mann-Whitney",
        statistic=u1,
        p_value=p,
        effect_size=effect_size_unpaired(u1 - u2, n1 * n2),
        n=N,
        n1=n1,
        n2=n2,
        method=method,
        statistic_kind="U1",
        n_tie_groups=int(ties.size),
        extra={"u2": u2, "rank_sum_1": r1},
    )


# ---------------------------------------------------------------------------
# Shapiro-Wilk (Royston's approximation, AS R94)

_C1 = (0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056)
_C2 = (0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633)
_C3 = (0.5440, -0.39978, 0.025054, -6.714e-4)
_C4 = (1.3822, -0.77857, 0.062767, -0.0020322)
_C5 = (-1.5861, -0.31082, -0.083751, 0.0038915)
_C6 = (-0.4803, -0.082676, 0.0030302)
_G = (-2.273, 0.459)


def _poly(coefs, x: float) -> float:
    # coefficients in ascending order
    out = 0.0
    for c in reversed(coefs):
        out = out * x + c
    return out


def _sw_coefficients(n: int) -> np.ndarray:
    """Upper-half weights a_1..a_{n//2} (largest first)."""
    half = n // 2
    if n == 3:
        return np.array([math.sqrt(0.5)])
    m = ndtri((np.arange(1, half + 1) - 0.375) / (n + 0.25))  # negative quantiles
    summ2 = 2.0 * float((m**2).sum())
    ssumm2 = math.sqrt(summ2)
    rsn = 1.0 / math.sqrt(n)
    a1 = _poly(_C1, rsn) - m[0] / ssumm2
    if n > 5:
        a2 = _poly(_C2, rsn) - m[1] / ssumm2
        fac = math.sqrt((summ2 - 2 * m[0] ** 2 - 2 * m[1] ** 2) / (1 - 2 * a1**2 - 2 * a2**2))
        a = -m / fac
        a[0], a[1] = a1, a2
    else:
        fac = math.sqrt((summ2 - 2 * m[0] ** 2) / (1 - 2 * a1**2))
        a = -m / fac
        a[0] = a1
    return a


def shapiro_wilk(samples) -> TestReport:
    x = np.sort(np.asarray(samples, dtype=np.float64))
    n = x.size
    if n < 3:
        raise TooFewSamples(f"Shapiro-Wilk needs at least 3 values, got {n}")
    if n > 5000:
        raise TooManySamples(f"Shapiro-Wilk approximation is valid up to n=5000, got {n}")
    if not np.isfinite(x).all():
        raise ValueError("samples must be finite")
    rng_ = x[-1] - x[0]
    if rng_ <= 1e-19 * max(1.0, abs(x[0])):
        raise DegenerateSample("all values are equal")
    x = (x - x[0]) / rng_
    a = _sw_coefficients(n)
    half = a.size
    num = float((a * (x[::-1][:half] - x[:half])).sum()) ** 2
    den = float(((x - x.mean()) ** 2).sum())
    w = min(num / den, 1.0)

    if n == 3:
        p = max(6.0 / math.pi * (math.asin(math.sqrt(w)) - math.pi / 3), 0.0)
    else:
        w1 = math.log(1.0 - w) if w < 1.0 else -math.inf
        if n <= 11:
            gamma = _poly(_G, n)
            if w1 >= gamma:
                p = 1e-99
            else:
                y = -math.log(gamma - w1)
                mu = _poly(_C3, n)
                sigma = math.exp(_poly(_C4, n))
                p = float(ndtr(-(y - mu) / sigma))
        else:
            ln = math.log(n)
            mu = _poly(_C5, ln)
            sigma = math.exp(_poly(_C6, ln))
            p = float(ndtr(-(w1 - mu) / sigma))
    return TestReport(test="Shapiro-Wilk", statistic=w, p_value=float(min(max(p, 0.0), 1.0)), n=n, statistic_kind="W")
