"""Two-sample rank statistics for the evaluation report.

One test lives here: the Wilcoxon rank-sum (Mann-Whitney) test, two-sided.
Small pooled samples are handled by exact enumeration of rank-sum
assignments, larger ones by a normal approximation with midranks, a tie
variance correction, and a continuity correction that shrinks the deviation
toward zero so swapping the samples flips the statistic's sign exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

from seedforge.errors import DegenerateTestError, ValidationError

EXACT_LIMIT = 12            # pooled size up to which "auto" enumerates
_EXACT_COMBINATIONS_CAP = 1_000_000


@dataclass(frozen=True)
class RankSumResult:
    statistic: float        # z score of the first sample's rank sum
    p_value: float          # two-sided
    method: str             # "exact" or "normal"
    n1: int
    n2: int


def _midranks(pooled: list[float]) -> list[float]:
    order = sorted(range(len(pooled)), key=lambda i: pooled[i])
    ranks = [0.0] * len(pooled)
    i = 0
    while i < len(order):
        j = i
        while (j + 1 < len(order)
               and pooled[order[j + 1]] == pooled[order[i]]):
            j += 1
        midrank = (i + j + 2) / 2.0  # ranks are 1-based
        for k in range(i, j + 1):
            ranks[order[k]] = midrank
        i = j + 1
    return ranks


def _tie_sizes(pooled: list[float]) -> list[int]:
    sizes: list[int] = []
    for value in sorted(set(pooled)):
        sizes.append(sum(1 for v in pooled if v == value))
    return sizes


def _normal_sf(z: float) -> float:
    """P(Z > z) for a standard normal."""
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def wilcoxon_rank_sum(a, b, method: str = "auto") -> RankSumResult:
    """Two-sided test of whether a and b come from one distribution.

    method "auto" enumerates exactly when the pooled size is at most 12
    and falls back to the normal approximation beyond that; the exact
    p-value is the doubled smaller tail, capped at 1. A pooled sample with
    no variation has no distribution to rank, so it raises
    DegenerateTestError rather than fabricating a p-value.
    """
    a = [float(x) for x in a]
    b = [float(x) for x in b]
    if not a or not b:
        raise ValidationError("both samples must be non-empty")
    for x in a + b:
        if math.isnan(x) or math.isinf(x):
            raise ValidationError("samples must be finite")
    if method not in ("auto", "exact", "normal"):
        raise ValidationError(f"unknown method {method!r}")
    n1, n2 = len(a), len(b)
    total = n1 + n2
    pooled = a + b
    ranks = _midranks(pooled)
    rank_sum = sum(ranks[:n1])

    mean = n1 * (total + 1) / 2.0
    tie_term = sum(t ** 3 - t for t in _tie_sizes(pooled))
    variance = (n1 * n2 / 12.0) * (
        (total + 1) - tie_term / (total * (total - 1)))
    if variance <= 0.0:
        raise DegenerateTestError(
            "pooled sample has no variation; ranks carry no information")
    deviation = rank_sum - mean
    # Shrinking |d| by half a rank before standardizing keeps the
    # statistic exactly antisymmetric under swapping the samples.
    adjusted = math.copysign(max(0.0, abs(deviation) - 0.5), deviation)
    z = adjusted / math.sqrt(variance)

    if method == "auto":
        method = "exact" if total <= EXACT_LIMIT else "normal"
    if method == "exact":
        p_value = _exact_p(ranks, n1, rank_sum)
    else:
        p_value = min(1.0, 2.0 * _normal_sf(abs(z)))
    return RankSumResult(statistic=z, p_value=p_value, method=method,
                         n1=n1, n2=n2)


def _exact_p(ranks: list[float], n1: int, observed: float) -> float:
    """Doubled smaller tail over all assignments of ranks to group one."""
    total = len(ranks)
    combos = math.comb(total, n1)
    if combos > _EXACT_COMBINATIONS_CAP:
        raise ValidationError(
            f"exact enumeration over {combos} assignments is not "
            f"tractable; use method='normal'")
    at_most = 0
    at_least = 0
    eps = 1e-9
    for subset in combinations(range(total), n1):
        s = sum(ranks[i] for i in subset)
        if s <= observed + eps:
            at_most += 1
        if s >= observed - eps:
            at_least += 1
    smaller_tail = min(at_most, at_least) / combos
    return min(1.0, 2.0 * smaller_tail)
