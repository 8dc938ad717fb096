"""Synthetic benchmark pools built from the Levy test function."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._rng import RngHandle
from ._validation import as_float_vector
from .pool import CandidatePool


@dataclass(frozen=True)
class LevySpec:
    """Sampling plan for a synthetic pool: dimension, box, size and seed."""

    dim: int = 1
    low: float = -10.0
    high: float = 10.0
    n: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be >= 1")
        if not self.low < self.high:
            raise ValueError("domain box must be non-degenerate")
        if self.n < 2:
            raise ValueError("pool size must be >= 2")


def levy_value(x) -> float:
    """Multi-modal Levy function, global minimum 0 at x = (1, ..., 1)."""
    x = as_float_vector(x, "x")
    w = 1.0 + (x - 1.0) / 4.0
    head = np.sin(np.pi * w[0]) ** 2
    middle = np.sum((w[:-1] - 1.0) ** 2 * (1.0 + 10.0 * np.sin(np.pi * w[:-1] + 1.0) ** 2))
    tail = (w[-1] - 1.0) ** 2 * (1.0 + np.sin(2.0 * np.pi * w[-1]) ** 2)
    return float(head + middle + tail)


def make_levy_pool(spec: LevySpec) -> CandidatePool:
    """Uniform candidates in the box with the Levy value as (minimized) oracle."""
    gen = RngHandle(spec.seed, "bench/levy").generator()
    features = gen.uniform(spec.low, spec.high, size=(spec.n, spec.dim))
    values = np.array([levy_value(row) for row in features])
    return CandidatePool(features, values, sense="minimize")
