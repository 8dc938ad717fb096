"""Cluster-label producers for candidate pools.

The k-means baseline runs Lloyd iterations on the standardized features
with greedy farthest-point seeding, so runs are reproducible from a seed
alone. Language-model clustering lives in :mod:`acqtree.llm`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from ._rng import RngHandle
from ._validation import as_float_matrix
from .pool import CandidatePool

CLUSTER_SOURCES = ("kmeans", "llm", "file")


@dataclass(frozen=True)
class ClusterAssignment:
    """Labels in [0, n_clusters) for every candidate of a pool."""

    source: str
    labels: np.ndarray
    n_clusters: int

    def __post_init__(self):
        if self.source not in CLUSTER_SOURCES:
            raise ValueError(f"source must be one of {CLUSTER_SOURCES}, got {self.source!r}")
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 1:
            raise ValueError("labels must be a flat vector")
        if labels.size and not ((labels >= 0) & (labels < self.n_clusters)).all():
            raise ValueError(f"labels must lie in [0, {self.n_clusters})")
        object.__setattr__(self, "labels", labels)


def _squared_distances(X: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # (n, c) matrix of squared euclidean distances
    return ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


class LloydKMeans(BaseEstimator):
    """Plain Lloyd k-means with deterministic farthest-point seeding.

    The first center is drawn from the random stream; each further center
    is the point farthest from its nearest chosen center (ties to the
    lowest index). Empty clusters are reseeded to the point farthest from
    its current center. Fitting stops when assignments stabilize or after
    ``max_iter`` sweeps.
    """

    def __init__(self, n_clusters: int = 5, max_iter: int = 100, random_state: int = 0):
        self.n_clusters = n_clusters
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, rng: RngHandle | None = None):
        X = as_float_matrix(X, "X")
        n = X.shape[0]
        if self.n_clusters < 1:
            raise ValueError("n_clusters must be >= 1")
        if self.n_clusters > n:
            raise ValueError(f"n_clusters={self.n_clusters} exceeds sample count {n}")
        handle = rng if rng is not None else RngHandle(self.random_state, "kmeans")
        gen = handle.generator()

        centers = np.empty((self.n_clusters, X.shape[1]))
        centers[0] = X[int(gen.integers(n))]
        nearest = _squared_distances(X, centers[:1]).min(axis=1)
        for c in range(1, self.n_clusters):
            centers[c] = X[int(np.argmax(nearest))]
            nearest = np.minimum(nearest, ((X - centers[c]) ** 2).sum(axis=1))

        labels = np.argmin(_squared_distances(X, centers), axis=1)
        sweeps = 0
        inertia_path = []
        for _ in range(self.max_iter):
            sweeps += 1
            for c in range(self.n_clusters):
                mask = labels == c
                if mask.any():
                    centers[c] = X[mask].mean(axis=0)
                else:
                    dist = ((X - centers[labels]) ** 2).sum(axis=1)
                    farthest = int(np.argmax(dist))
                    centers[c] = X[farthest]
                    labels[farthest] = c
            dist2 = _squared_distances(X, centers)
            new_labels = np.argmin(dist2, axis=1)
            inertia_path.append(float(dist2.min(axis=1).sum()))
            converged = bool((new_labels == labels).all())
            labels = new_labels
            if converged:
                break
        self.cluster_centers_ = centers
        self.labels_ = labels
        self.inertia_ = float(_squared_distances(X, centers).min(axis=1).sum())
        self.inertia_path_ = inertia_path
        self.n_iter_ = sweeps
        self.n_features_in_ = X.shape[1]
        return self

    def fit_predict(self, X, rng: RngHandle | None = None) -> np.ndarray:
        return self.fit(X, rng=rng).labels_

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "cluster_centers_"):
            raise RuntimeError("k-means is not fitted; call fit(X) first")
        X = as_float_matrix(X, "X", n_features=self.cluster_centers_.shape[1])
        return np.argmin(_squared_distances(X, self.cluster_centers_), axis=1)


def kmeans_cluster(
    pool: CandidatePool, n_clusters: int, rng: RngHandle, max_iters: int = 100
) -> ClusterAssignment:
    """Label a pool by k-means over its standardized features."""
    if n_clusters < 2:
        raise ValueError("pool clustering needs at least 2 clusters")
    model = LloydKMeans(n_clusters=n_clusters, max_iter=max_iters)
    labels = model.fit_predict(pool.features, rng=rng)
    return ClusterAssignment("kmeans", labels, n_clusters)
