"""Utility-weighted binary classifier whose odds are the acquisition value.

The network is a fixed two-hidden-layer perceptron (d -> 50 -> 50 -> 1,
rectified-linear hidden units, logistic output). Training minimizes

    mean over the batch of  -u(y; tau) * log pi(x) - log(1 - pi(x))

so the optimal classifier's odds pi/(1-pi) equal the expected utility of a
candidate, which is used directly as the acquisition value. With the
probability-of-improvement utility this is a weighted binary cross-entropy
where every sample appears once as a negative and the above-threshold
samples additionally as positives.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator

from ._rng import RngHandle
from ._validation import as_float_matrix, as_float_vector, check_in_unit_interval

HIDDEN_SIZES = (50, 50)
PROB_CLAMP = 1e-6
PARAMS_FORMAT_VERSION = 1

UTILITY_KINDS = ("pi", "ei")


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss becomes non-finite."""


@dataclass(frozen=True)
class UtilitySpec:
    """Utility used as per-sample loss weight: ``pi`` is the indicator
    1(y > tau), ``ei`` the hinge max(y - tau, 0)."""

    kind: str
    threshold: float

    def __post_init__(self):
        if self.kind not in UTILITY_KINDS:
            raise ValueError(f"utility kind must be one of {UTILITY_KINDS}, got {self.kind!r}")
        if not math.isfinite(self.threshold):
            raise ValueError("utility threshold must be finite")

    def weights(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if self.kind == "pi":
            return (y > self.threshold).astype(np.float64)
        return np.maximum(y - self.threshold, 0.0)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 256
    learning_rate: float = 1e-2
    weight_decay: float = 5e-4
    gamma: float = 0.5
    normalize_utility: bool = False  # optional per-batch weight rescaling, off by default

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be non-negative")
        check_in_unit_interval(self.gamma, "gamma", open_ends=True)


@dataclass
class ClassifierParams:
    """Weights and biases of the d -> 50 -> 50 -> 1 network."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0], *(w.shape[1] for w in self.weights))

    @property
    def n_features(self) -> int:
        return self.weights[0].shape[0]

    def copy(self) -> "ClassifierParams":
        return ClassifierParams(
            [w.copy() for w in self.weights], [b.copy() for b in self.biases]
        )

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def from_vector(cls, vector: np.ndarray, layer_sizes: Sequence[int]) -> "ClassifierParams":
        vector = np.asarray(vector, dtype=np.float64)
        weights, biases, pos = [], [], 0
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            weights.append(vector[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out).copy())
            pos += fan_in * fan_out
        for fan_out in layer_sizes[1:]:
            biases.append(vector[pos : pos + fan_out].copy())
            pos += fan_out
        if pos != vector.size:
            raise ValueError("parameter vector length does not match layer sizes")
        return cls(weights, biases)

    def save(self, path: str | Path) -> None:
        payload = {
            "format_version": PARAMS_FORMAT_VERSION,
            "layer_sizes": list(self.layer_sizes),
            "values": self.to_vector().tolist(),
        }
        Path(path).write_text(json.dumps(payload))

    @classmethod
    def load(cls, path: str | Path) -> "ClassifierParams":
        payload = json.loads(Path(path).read_text())
        if payload.get("format_version") != PARAMS_FORMAT_VERSION:
            raise ValueError(f"unsupported parameter format: {payload.get('format_version')}")
        return cls.from_vector(np.array(payload["values"]), payload["layer_sizes"])


def init_params(
    n_features: int, rng: RngHandle, hidden_sizes: Sequence[int] = HIDDEN_SIZES
) -> ClassifierParams:
    """Uniform init in [-sqrt(1/fan_in), +sqrt(1/fan_in)] per layer."""
    if n_features < 1:
        raise ValueError("n_features must be >= 1")
    gen = rng.generator()
    sizes = (n_features, *hidden_sizes, 1)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = math.sqrt(1.0 / fan_in)
        weights.append(gen.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(gen.uniform(-bound, bound, size=fan_out))
    return ClassifierParams(weights, biases)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward(params: ClassifierParams, X: np.ndarray):
    z1 = X @ params.weights[0] + params.biases[0]
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ params.weights[1] + params.biases[1]
    a2 = np.maximum(z2, 0.0)
    z3 = (a2 @ params.weights[2] + params.biases[2]).ravel()
    return z1, a1, z2, a2, z3


def predict(params: ClassifierParams, features) -> np.ndarray | float:
    """Classifier probability pi(x), clamped to [1e-6, 1 - 1e-6].

    Accepts a single feature vector (returns a scalar) or a matrix of row
    vectors (returns an array).
    """
    arr = np.asarray(features, dtype=np.float64)
    single = arr.ndim == 1
    X = as_float_matrix(arr, "features", n_features=params.n_features)
    probs = np.clip(_sigmoid(_forward(params, X)[4]), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(probs[0]) if single else probs


def acquisition(params: ClassifierParams, features) -> np.ndarray | float:
    """Acquisition value pi/(1-pi); a strictly increasing map of predict."""
    probs = predict(params, features)
    return probs / (1.0 - probs)


def lfbo_loss(params: ClassifierParams, X, y, utility: UtilitySpec) -> float:
    """Mean utility-weighted classification loss over a batch."""
    X = as_float_matrix(X, "X", n_features=params.n_features)
    y = as_float_vector(y, "y")
    if X.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y disagree on batch size")
    u = utility.weights(y)
    p = np.clip(_sigmoid(_forward(params, X)[4]), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(np.mean(-u * np.log(p) - np.log1p(-p)))


def lfbo_grad(
    params: ClassifierParams, X: np.ndarray, y: np.ndarray, utility: UtilitySpec
) -> tuple[float, list[np.ndarray]]:
    """Loss plus analytic gradients, ordered as ``params.arrays()``.

    The gradient is taken through the probability clamp, so it matches
    finite differences of :func:`lfbo_loss` exactly (zero where clamped).
    """
    return _loss_and_grad(params, X, utility.weights(y))


def _loss_and_grad(
    params: ClassifierParams, X: np.ndarray, u: np.ndarray
) -> tuple[float, list[np.ndarray]]:
    n = X.shape[0]
    z1, a1, z2, a2, z3 = _forward(params, X)
    s = _sigmoid(z3)
    p = np.clip(s, PROB_CLAMP, 1.0 - PROB_CLAMP)
    loss = float(np.mean(-u * np.log(p) - np.log1p(-p)))

    inside = (s > PROB_CLAMP) & (s < 1.0 - PROB_CLAMP)
    dz3 = np.where(inside, s * (1.0 + u) - u, 0.0) / n
    g3 = dz3[:, None]
    dW3 = a2.T @ g3
    db3 = g3.sum(axis=0)
    da2 = g3 @ params.weights[2].T
    dz2 = da2 * (z2 > 0.0)
    dW2 = a1.T @ dz2
    db2 = dz2.sum(axis=0)
    da1 = dz2 @ params.weights[1].T
    dz1 = da1 * (z1 > 0.0)
    dW1 = X.T @ dz1
    db1 = dz1.sum(axis=0)
    return loss, [dW1, dW2, dW3, db1, db2, db3]


def train(
    initial: ClassifierParams,
    X,
    y,
    utility: UtilitySpec,
    cfg: TrainConfig,
    rng: RngHandle,
) -> ClassifierParams:
    """Adam with decoupled weight decay on shuffled mini-batches.

    Returns a trained copy; ``initial`` is left untouched. The result is a
    pure function of (initial, data order, cfg, rng)."""
    X = as_float_matrix(X, "X", n_features=initial.n_features)
    y = as_float_vector(y, "y")
    if X.shape[0] == 0:
        raise ValueError("training data must be non-empty")
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y disagree on sample count")

    params = initial.copy()
    arrays = params.arrays()
    m = [np.zeros_like(a) for a in arrays]
    v = [np.zeros_like(a) for a in arrays]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    gen = rng.generator()
    n = X.shape[0]
    for epoch in range(cfg.epochs):
        order = gen.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, yb = X[idx], y[idx]
            u = utility.weights(yb)
            if cfg.normalize_utility and u.sum() > 0.0:
                u = u * (u.size / u.sum())
            loss, grads = _loss_and_grad(params, xb, u)
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"non-finite training loss at epoch {epoch}")
            step += 1
            bc1 = 1.0 - beta1**step
            bc2 = 1.0 - beta2**step
            for a, g, mi, vi in zip(arrays, grads, m, v):
                mi *= beta1
                mi += (1.0 - beta1) * g
                vi *= beta2
                vi += (1.0 - beta2) * (g * g)
                a -= cfg.learning_rate * (
                    (mi / bc1) / (np.sqrt(vi / bc2) + eps) + cfg.weight_decay * a
                )
    return params


def quantile_threshold(values, gamma: float) -> float:
    """Threshold so the fraction of values strictly above it is as close to
    ``gamma`` as possible from below (nearest-rank (1 - gamma)-quantile)."""
    vals = as_float_vector(values, "values")
    if vals.size == 0:
        raise ValueError("cannot take a quantile of an empty set")
    check_in_unit_interval(gamma, "gamma")
    ordered = np.sort(vals)
    n = vals.size
    # small nudge keeps exact integer ranks from drifting up one slot in floats
    rank = max(1, math.ceil((1.0 - gamma) * n - 1e-9))
    return float(ordered[rank - 1])


def relative_density_ratio(r0: float, gamma: float) -> float:
    """Bounded transform of the plain density ratio: 1/(gamma + (1-gamma)/r0).

    Non-decreasing in ``r0`` and capped at 1/gamma for gamma > 0.
    """
    if not r0 > 0.0:
        raise ValueError(f"r0 must be positive, got {r0}")
    check_in_unit_interval(gamma, "gamma")
    if gamma == 0.0:
        return float(r0)
    if gamma == 1.0:
        return 1.0
    return 1.0 / (gamma + (1.0 - gamma) / r0)


class LfboClassifier(BaseEstimator):
    """Scikit-learn style front end for the acquisition classifier.

    ``fit(X, y)`` takes the raw property values: the improvement threshold
    is the gamma-quantile of ``y`` and the network is trained with the
    configured utility weighting. ``predict_proba`` / ``acquisition`` then
    score new candidates.
    """

    def __init__(
        self,
        utility: str = "ei",
        gamma: float = 0.5,
        epochs: int = 50,
        batch_size: int = 256,
        learning_rate: float = 1e-2,
        weight_decay: float = 5e-4,
        random_state: int = 0,
    ):
        self.utility = utility
        self.gamma = gamma
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            gamma=self.gamma,
        )

    def fit(self, X, y, init: ClassifierParams | None = None, rng: RngHandle | None = None):
        X = as_float_matrix(X, "X")
        y = as_float_vector(y, "y")
        cfg = self._train_config()
        handle = rng if rng is not None else RngHandle(self.random_state, "lfbo")
        start = init if init is not None else init_params(X.shape[1], handle.child("init"))
        self.threshold_ = quantile_threshold(y, cfg.gamma)
        spec = UtilitySpec(self.utility, self.threshold_)
        self.params_ = train(start, X, y, spec, cfg, handle.child("train"))
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X) -> np.ndarray:
        self._check_fitted()
        p = np.atleast_1d(predict(self.params_, X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X)[:, 1] > 0.5).astype(int)

    def acquisition(self, X) -> np.ndarray:
        self._check_fitted()
        return np.atleast_1d(acquisition(self.params_, X))

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise RuntimeError("classifier is not fitted; call fit(X, y) first")
