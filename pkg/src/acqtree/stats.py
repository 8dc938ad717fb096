"""Heteroscedasticity-robust group comparisons for cluster filtering.

Welch's ANOVA gates the filter: only when it finds a significant
difference in cluster means are pairwise comparisons (Welch t statistics
with Satterthwaite degrees of freedom) used to drop clusters that are
significantly worse than the best one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special

from .pool import CandidatePool, ObservationSet

VARIANCE_FLOOR = 1e-12
CORRECTIONS = ("none", "bonferroni")


class InapplicableTestError(ValueError):
    """Raised when fewer than two groups are eligible for testing."""


@dataclass(frozen=True)
class GroupSummary:
    """Per-cluster sample statistics; ``variance`` uses the n-1 divisor."""

    label: int
    n: int
    mean: float
    variance: float


def summarize_group(label: int, values) -> GroupSummary:
    vals = np.asarray(values, dtype=np.float64).ravel()
    if vals.size == 0:
        raise ValueError(f"group {label} has no values")
    var = float(vals.var(ddof=1)) if vals.size >= 2 else 0.0
    return GroupSummary(int(label), int(vals.size), float(vals.mean()), var)


@dataclass(frozen=True)
class WelchResult:
    statistic: float  # F
    df_num: int  # k - 1
    df_denom: float  # Satterthwaite approximation
    p_value: float


@dataclass(frozen=True)
class PairwiseResult:
    pair: tuple[int, int]
    statistic: float  # t
    df: float
    p_value: float


def _eligible(groups: Sequence[GroupSummary]) -> list[GroupSummary]:
    return [g for g in groups if g.n >= 2]


def welch_anova(groups: Sequence[GroupSummary]) -> WelchResult:
    """Welch's k-group test of equal means under unequal variances.

    Groups with fewer than two samples are dropped; variances below the
    floor are clamped so their weights stay finite. Raises
    :class:`InapplicableTestError` with fewer than two usable groups.
    """
    usable = _eligible(groups)
    k = len(usable)
    if k < 2:
        raise InapplicableTestError(f"need at least 2 groups with n >= 2, got {k}")
    n = np.array([g.n for g in usable], dtype=np.float64)
    mean = np.array([g.mean for g in usable])
    var = np.maximum(np.array([g.variance for g in usable]), VARIANCE_FLOOR)

    w = n / var
    w_total = w.sum()
    grand = (w * mean).sum() / w_total
    spread = ((1.0 - w / w_total) ** 2 / (n - 1.0)).sum()
    numerator = (w * (mean - grand) ** 2).sum()
    f_stat = numerator / ((k - 1) * (1.0 + 2.0 * (k - 2) * spread / (k**2 - 1)))
    df_denom = (k**2 - 1) / (3.0 * spread)
    p = f_sf(f_stat, k - 1, df_denom)
    return WelchResult(float(f_stat), k - 1, float(df_denom), float(p))


def games_howell(
    groups: Sequence[GroupSummary], correction: str = "none"
) -> list[PairwiseResult]:
    """All pairwise mean comparisons with per-pair Satterthwaite df.

    Degenerate pairs with zero standard error score p = 1 when the means
    agree and p = 0 otherwise. Bonferroni multiplies each p by the number
    of pairs, capped at 1.
    """
    if correction not in CORRECTIONS:
        raise ValueError(f"correction must be one of {CORRECTIONS}, got {correction!r}")
    usable = _eligible(groups)
    k = len(usable)
    if k < 2:
        raise InapplicableTestError(f"need at least 2 groups with n >= 2, got {k}")
    n_pairs = k * (k - 1) // 2
    results = []
    for a in range(k):
        for b in range(a + 1, k):
            gi, gj = usable[a], usable[b]
            se2 = gi.variance / gi.n + gj.variance / gj.n
            diff = gi.mean - gj.mean
            if se2 == 0.0:
                t = 0.0 if diff == 0.0 else math.copysign(math.inf, diff)
                df = float(min(gi.n, gj.n) - 1)
                p = 1.0 if diff == 0.0 else 0.0
            else:
                t = diff / math.sqrt(se2)
                df = se2**2 / (
                    (gi.variance / gi.n) ** 2 / (gi.n - 1)
                    + (gj.variance / gj.n) ** 2 / (gj.n - 1)
                )
                p = 2.0 * t_sf(abs(t), df)
            if correction == "bonferroni":
                p = min(1.0, p * n_pairs)
            results.append(PairwiseResult((gi.label, gj.label), float(t), float(df), float(p)))
    return results


def f_sf(f_stat: float, df_num: float, df_denom: float) -> float:
    """Upper tail of the F distribution via the regularized incomplete beta."""
    if f_stat <= 0.0:
        return 1.0
    x = df_denom / (df_denom + df_num * f_stat)
    return float(special.betainc(df_denom / 2.0, df_num / 2.0, x))


def t_sf(t_stat: float, df: float) -> float:
    """Upper tail of Student's t distribution."""
    return float(1.0 - special.stdtr(df, t_stat))


def groups_from_observations(
    obs: ObservationSet, pool: CandidatePool
) -> dict[int, np.ndarray]:
    """Observed values keyed by the candidates' cluster labels."""
    if pool.clusters is None:
        raise ValueError("pool has no cluster labels")
    grouped: dict[int, list[float]] = {}
    for ob in obs:
        grouped.setdefault(int(pool.clusters[ob.candidate_id]), []).append(ob.y)
    return {label: np.array(vals) for label, vals in grouped.items()}


def select_clusters(
    obs: ObservationSet,
    pool: CandidatePool,
    p_threshold: float,
    correction: str = "none",
) -> set[int]:
    """Cluster labels kept for the next selection round.

    ``p_threshold = 0`` disables filtering. Otherwise the Welch gate must
    fire (p below threshold) before any cluster is dropped, and only
    clusters whose mean is significantly below the best cluster's mean are
    excluded. Clusters with fewer than two observations and the best-mean
    cluster itself are always retained; the result is never empty.
    """
    if pool.clusters is None:
        raise ValueError("pool has no cluster labels")
    if not 0.0 <= p_threshold <= 1.0:
        raise ValueError(f"p_threshold must lie in [0, 1], got {p_threshold}")
    all_labels = {int(label) for label in np.unique(pool.clusters)}
    if p_threshold == 0.0:
        return all_labels

    grouped = groups_from_observations(obs, pool)
    summaries = [summarize_group(label, vals) for label, vals in sorted(grouped.items())]
    try:
        gate = welch_anova(summaries)
    except InapplicableTestError:
        return all_labels
    if gate.p_value >= p_threshold:
        return all_labels

    usable = _eligible(summaries)
    best = max(usable, key=lambda g: (g.mean, -g.label))
    pairwise = {frozenset(r.pair): r for r in games_howell(usable, correction)}
    excluded = set()
    for g in usable:
        if g.label == best.label or g.mean >= best.mean:
            continue
        result = pairwise[frozenset((best.label, g.label))]
        if result.p_value < p_threshold:
            excluded.add(g.label)
    return all_labels - excluded
