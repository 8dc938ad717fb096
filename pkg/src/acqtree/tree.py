"""Binary acquisition tree built over the observed data each round.

Nodes live in heap layout (children of ``k`` are ``2k+1`` and ``2k+2``).
Node ``k`` trains a classifier on its observation bucket with a quantile
threshold, pulls the shared meta parameters toward the trained weights
(sequential first-order meta update), and routes its observations to the
children by thresholding the classifier at 0.5. Nodes at the maximum depth
are trained as local acquisition providers but never split.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from ._rng import RngHandle
from ._validation import as_float_matrix, as_float_vector
from .classifier import (
    ClassifierParams,
    TrainConfig,
    UtilitySpec,
    acquisition,
    init_params,
    predict,
    quantile_threshold,
    train,
)


def node_depth(index: int) -> int:
    return int(math.floor(math.log2(index + 1)))


def is_splitable(y, threshold: float, min_leaf: int) -> bool:
    """A bucket can be split when both threshold classes are non-empty and
    there are enough observations for two children of ``min_leaf`` each."""
    y = as_float_vector(y, "y")
    if y.size < 2 * min_leaf:
        return False
    above = y > threshold
    return bool(above.any() and (~above).any())


@dataclass
class TreeNode:
    """Observation bucket plus (when fitted) its local classifier."""

    index: int
    observed_ids: list[int]
    n: int
    value: float  # mean observed y, internal orientation
    variance: float  # population variance of observed y
    threshold: float | None = None
    params: ClassifierParams | None = None
    fitted: bool = False

    def summary(self) -> dict:
        def clean(x):
            return None if x is None or not math.isfinite(x) else x

        return {
            "k": self.index,
            "n": self.n,
            "v": clean(self.value),
            "var": clean(self.variance),
            "tau": clean(self.threshold),
            "fitted": self.fitted,
        }


class AcquisitionTree(BaseEstimator):
    """Fits the per-round tree of local acquisition classifiers.

    Parameters mirror the training configuration; the observed data, the
    shared meta parameters and the random stream are supplied to ``fit``.
    After fitting, ``nodes_`` maps heap indices to buckets, ``fitted_``
    lists the trained nodes in index order and ``meta_`` holds the updated
    shared parameters.
    """

    def __init__(
        self,
        depth: int = 2,
        min_leaf: int = 2,
        meta_rate: float = 0.01,
        utility: str = "ei",
        gamma: float = 0.5,
        epochs: int = 50,
        batch_size: int = 256,
        learning_rate: float = 1e-2,
        weight_decay: float = 5e-4,
        normalize_utility: bool = False,
    ):
        self.depth = depth
        self.min_leaf = min_leaf
        self.meta_rate = meta_rate
        self.utility = utility
        self.gamma = gamma
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.normalize_utility = normalize_utility

    @property
    def max_index(self) -> int:
        return 2 ** (self.depth + 1) - 2

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            gamma=self.gamma,
            normalize_utility=self.normalize_utility,
        )

    def fit(
        self,
        X,
        y,
        ids=None,
        meta: ClassifierParams | None = None,
        rng: RngHandle | None = None,
    ):
        """Build the tree from observed features ``X`` and values ``y``.

        ``ids`` are the candidate ids backing each row (defaults to row
        numbers). ``meta`` seeds every node's training and is pulled toward
        each trained node by ``meta_rate``; the input object is not
        modified. Raises with the node index attached if training fails.
        """
        X = as_float_matrix(X, "X")
        y = as_float_vector(y, "y")
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y disagree on sample count")
        if X.shape[0] == 0:
            raise ValueError("cannot build a tree without observations")
        if not 0.0 <= self.meta_rate <= 1.0:
            raise ValueError(f"meta_rate must lie in [0, 1], got {self.meta_rate}")
        if self.depth < 0:
            raise ValueError("depth must be non-negative")
        ids = list(range(X.shape[0])) if ids is None else [int(i) for i in ids]
        if len(ids) != X.shape[0]:
            raise ValueError("ids and X disagree on sample count")
        handle = rng if rng is not None else RngHandle(0, "tree")
        meta = meta.copy() if meta is not None else init_params(X.shape[1], handle.child("meta-init"))

        cfg = self._train_config()
        buckets: dict[int, np.ndarray] = {0: np.arange(X.shape[0])}
        self.nodes_: dict[int, TreeNode] = {}
        self.fitted_: list[int] = []
        self.n_features_in_ = X.shape[1]

        for k in range(self.max_index + 1):
            rows = buckets.get(k)
            if rows is None:
                continue
            ys = y[rows]
            node = TreeNode(
                index=k,
                observed_ids=[ids[i] for i in rows],
                n=int(rows.size),
                value=float(ys.mean()) if rows.size else float("nan"),
                variance=float(ys.var()) if rows.size else float("nan"),
            )
            self.nodes_[k] = node
            if rows.size < self.min_leaf:
                continue
            tau = quantile_threshold(ys, cfg.gamma)
            node.threshold = tau
            if not is_splitable(ys, tau, self.min_leaf):
                continue
            try:
                params = train(
                    meta,
                    X[rows],
                    ys,
                    UtilitySpec(self.utility, tau),
                    cfg,
                    handle.child(f"node{k}"),
                )
            except Exception as exc:
                raise RuntimeError(f"training failed at tree node {k}: {exc}") from exc
            meta = _interpolate(meta, params, self.meta_rate)
            node.params = params
            node.fitted = True
            self.fitted_.append(k)
            if node_depth(k) < self.depth:
                probs = predict(params, X[rows])
                left = rows[probs > 0.5]
                right = rows[probs <= 0.5]
                buckets[2 * k + 1] = left
                buckets[2 * k + 2] = right
        self.meta_ = meta
        return self

    def is_fitted(self, k: int) -> bool:
        return hasattr(self, "nodes_") and k in self.nodes_ and self.nodes_[k].fitted

    def node(self, k: int) -> TreeNode:
        if not hasattr(self, "nodes_") or k not in self.nodes_:
            raise KeyError(f"tree has no node {k}")
        return self.nodes_[k]

    def route(self, k: int, features) -> int:
        """Child index for a feature vector under node ``k``'s classifier:
        left (2k+1) strictly above probability 0.5, right otherwise."""
        node = self.node(k)
        if not node.fitted:
            raise ValueError(f"node {k} is not fitted; cannot route")
        p = predict(node.params, np.asarray(features, dtype=np.float64))
        return 2 * k + 1 if float(np.asarray(p).ravel()[0]) > 0.5 else 2 * k + 2

    def route_mask(self, k: int, X) -> np.ndarray:
        """Vectorized routing: True where rows go to the left child."""
        node = self.node(k)
        if not node.fitted:
            raise ValueError(f"node {k} is not fitted; cannot route")
        return np.atleast_1d(predict(node.params, X)) > 0.5

    def node_acquisition(self, k: int, features) -> np.ndarray | float:
        node = self.node(k)
        if not node.fitted:
            raise ValueError(f"node {k} is not fitted; no acquisition available")
        return acquisition(node.params, features)

    def summary(self) -> list[dict]:
        return [self.nodes_[k].summary() for k in sorted(self.nodes_)]


def _interpolate(meta: ClassifierParams, trained: ClassifierParams, eta: float) -> ClassifierParams:
    # (1-eta)*meta + eta*trained is exact at both endpoints, unlike
    # meta + eta*(trained - meta) which can cancel catastrophically at eta=1
    if eta == 0.0:
        return meta
    if eta == 1.0:
        return trained.copy()
    return ClassifierParams(
        [(1.0 - eta) * mw + eta * tw for mw, tw in zip(meta.weights, trained.weights)],
        [(1.0 - eta) * mb + eta * tb for mb, tb in zip(meta.biases, trained.biases)],
    )
