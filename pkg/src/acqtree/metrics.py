"""Progress metrics and cross-run aggregation.

All formulas work in the internal (maximization) orientation. GAP is a
normalized best-so-far: 0 means no progress past the initial set, 1 means
the pool optimum was found. Average regret measures the overall quality of
the queried candidates rather than just the single best.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def gap(y_best_t: float, y_init: float, y_opt: float) -> float:
    """(y*_t - y0) / (y* - y0); defined as 1 when the pool optimum already
    sits in the initial set (y* == y0)."""
    if y_opt == y_init:
        return 1.0
    return (y_best_t - y_init) / (y_opt - y_init)


def avg_regret(ys, y_opt: float) -> float:
    """Mean shortfall of the queried values from the pool optimum."""
    ys = np.asarray(ys, dtype=np.float64)
    if ys.size == 0:
        raise ValueError("average regret needs at least one query")
    return float(np.mean(y_opt - ys))


@dataclass(frozen=True)
class MetricSeries:
    """Per-iteration metric arrays for one run."""

    best: np.ndarray
    gap: np.ndarray
    regret: np.ndarray
    y_opt: float
    y_init: float

    def __post_init__(self):
        for name in ("best", "gap", "regret"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if not len(self.best) == len(self.gap) == len(self.regret):
            raise ValueError("metric arrays must share one horizon")


def metric_series(queried_ys, y_init: float, y_opt: float) -> MetricSeries:
    """Build the per-iteration series from the raw sequence of queried values.

    ``queried_ys`` holds only the optimizer's selections; initialization
    queries enter through ``y_init`` and are excluded from the regret.
    """
    ys = np.asarray(queried_ys, dtype=np.float64)
    best = np.maximum.accumulate(np.maximum(ys, y_init)) if ys.size else ys.copy()
    gaps = np.array([gap(b, y_init, y_opt) for b in best])
    regrets = np.cumsum(y_opt - ys) / np.arange(1, ys.size + 1) if ys.size else ys.copy()
    return MetricSeries(best, gaps, regrets, float(y_opt), float(y_init))


def aggregate(runs: list[MetricSeries], mode: str = "median", normalize: bool = False) -> dict:
    """Summarize aligned runs into center lines and dispersion bands.

    Emits, per iteration and per metric (gap, regret, best): the requested
    center (mean or median), the min-max envelope and the interquartile
    band. ``normalize`` divides each run's regrets by its own (y* - y0)
    span for cross-dataset comparability.
    """
    if mode not in ("mean", "median"):
        raise ValueError(f"mode must be 'mean' or 'median', got {mode!r}")
    if not runs:
        raise ValueError("nothing to aggregate")
    horizons = {len(r.gap) for r in runs}
    if len(horizons) != 1:
        raise ValueError(f"runs have mismatched horizons: {sorted(horizons)}")

    def regret_of(run: MetricSeries) -> np.ndarray:
        if not normalize:
            return run.regret
        span = run.y_opt - run.y_init
        return run.regret / span if span != 0 else np.zeros_like(run.regret)

    stacks = {
        "gap": np.vstack([r.gap for r in runs]),
        "regret": np.vstack([regret_of(r) for r in runs]),
        "best": np.vstack([r.best for r in runs]),
    }
    center = np.mean if mode == "mean" else np.median
    out: dict[str, np.ndarray] = {"iteration": np.arange(1, next(iter(horizons)) + 1)}
    for name, stack in stacks.items():
        out[f"{name}_{mode}"] = center(stack, axis=0)
        out[f"{name}_min"] = stack.min(axis=0)
        out[f"{name}_max"] = stack.max(axis=0)
        out[f"{name}_q25"] = np.quantile(stack, 0.25, axis=0)
        out[f"{name}_q75"] = np.quantile(stack, 0.75, axis=0)
    return out
