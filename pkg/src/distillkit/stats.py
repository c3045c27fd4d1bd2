"""Seed-sweep statistics: summaries, paired t-test, exact Wilcoxon.

Runs are paired by seed index.  The t-test p-value comes from the
Student-t survival function expressed through the regularized incomplete
beta function (continued-fraction evaluation, accurate to well below
1e-6).  The Wilcoxon signed-rank test is exact: with n non-zero
differences the two-sided p counts, over all 2^n equally likely sign
assignments, those whose min rank-sum is at most the observed one.
Average ranks are used for tied magnitudes, so rank sums live on a
half-integer grid; doubling them keeps every computation in exact
integer arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

__all__ = [
    "SeedRunSet",
    "StatisticError",
    "summarize",
    "paired_t_test",
    "wilcoxon_signed_rank",
    "student_t_sf_two_sided",
    "regularized_incomplete_beta",
]

MAX_EXACT_N = 25


class StatisticError(ValueError):
    """Raised when a test statistic is undefined for the given data."""


@dataclass(frozen=True)
class SeedRunSet:
    """Per-seed metric values for one labelled configuration."""

    label: str
    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if any(not math.isfinite(v) for v in vals):
            raise ValueError("run values must be finite")
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return len(self.values)


def summarize(runs: SeedRunSet) -> tuple[float, float]:
    """(mean, sample standard deviation with n-1 denominator)."""
    n = len(runs)
    if n < 2:
        raise ValueError("need at least two runs to summarize")
    mean = sum(runs.values) / n
    var = sum((v - mean) ** 2 for v in runs.values) / (n - 1)
    return mean, math.sqrt(var)


# ---------------------------------------------------------------------------
# Regularized incomplete beta via the standard continued fraction
# (modified Lentz), with the symmetry switch at x = (a+1)/(a+b+2).
# ---------------------------------------------------------------------------

def _beta_cont_frac(a: float, b: float, x: float) -> float:
    tiny = 1e-300
    eps = 1e-16
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0 or b <= 0:
        raise ValueError("shape parameters must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cont_frac(a, b, x) / a
    return 1.0 - front * _beta_cont_frac(b, a, 1.0 - x) / b


def student_t_sf_two_sided(t: float, df: int) -> float:
    """Two-sided tail probability of Student's t with df degrees of freedom."""
    if df < 1:
        raise ValueError("degrees of freedom must be at least 1")
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    return regularized_incomplete_beta(df / 2.0, 0.5, x)


def paired_t_test(a: SeedRunSet, b: SeedRunSet) -> tuple[float, float, int]:
    """Paired Student's t-test: (t, two-sided p, degrees of freedom)."""
    if len(a) != len(b):
        raise ValueError("paired runs must have equal length")
    n = len(a)
    if n < 2:
        raise ValueError("need at least two paired runs")
    d = [x - y for x, y in zip(a.values, b.values)]
    mean = sum(d) / n
    var = sum((v - mean) ** 2 for v in d) / (n - 1)
    if var == 0.0:
        raise StatisticError("paired differences have zero variance: t statistic undefined")
    t = mean / math.sqrt(var / n)
    return t, student_t_sf_two_sided(t, n - 1), n - 1


def _average_ranks_doubled(magnitudes: Sequence[float]) -> list[int]:
    """Average ranks of |d|, times two (always integers, even with ties)."""
    order = sorted(range(len(magnitudes)), key=lambda i: magnitudes[i])
    doubled = [0] * len(magnitudes)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and magnitudes[order[j + 1]] == magnitudes[order[i]]:
            j += 1
        # ranks i+1 .. j+1 (1-based) share the average; doubled avg = i+j+2
        for k in range(i, j + 1):
            doubled[order[k]] = i + j + 2
        i = j + 1
    return doubled


def _count_at_most(doubled_ranks: Sequence[int], w2: int) -> int:
    """Number of sign assignments with min(rank sum, complement) <= w2.

    Exact subset-sum count over all 2^n assignments, evaluated with a
    polynomial table rather than an explicit loop.
    """
    total = sum(doubled_ranks)
    counts = [0] * (total + 1)
    counts[0] = 1
    for r in doubled_ranks:
        for s in range(total, r - 1, -1):
            if counts[s - r]:
                counts[s] += counts[s - r]
    return sum(cnt for s, cnt in enumerate(counts) if min(s, total - s) <= w2)


def wilcoxon_signed_rank(a: SeedRunSet, b: SeedRunSet) -> tuple[float, float]:
    """Exact Wilcoxon signed-rank test: (W, two-sided exact p).

    Zero differences are dropped before ranking; W is the smaller of the
    positive and negative rank sums.
    """
    if len(a) != len(b):
        raise ValueError("paired runs must have equal length")
    d = [x - y for x, y in zip(a.values, b.values) if x != y]
    if not d:
        raise StatisticError("all paired differences are zero: Wilcoxon statistic undefined")
    if len(d) > MAX_EXACT_N:
        raise ValueError(f"exact enumeration supports at most {MAX_EXACT_N} non-zero differences")
    doubled = _average_ranks_doubled([abs(v) for v in d])
    w_plus2 = sum(r for r, v in zip(doubled, d) if v > 0)
    w_minus2 = sum(r for r, v in zip(doubled, d) if v < 0)
    w2 = min(w_plus2, w_minus2)
    count = _count_at_most(doubled, w2)
    p = count / 2 ** len(d)
    return w2 / 2.0, p
