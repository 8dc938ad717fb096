"""Candidate selection: score-guided descent plus backtracking.

The path walks from the root toward a leaf, at each fitted node moving to
the child with the higher exploration score. Selection then backtracks
from the deepest path node toward the root until it finds a node whose
region still contains retained, unobserved candidates, and returns the one
with the highest local acquisition value there.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .pool import CandidatePool, ObservationSet, PoolExhaustedError
from .tree import AcquisitionTree

SCORE_KINDS = ("uct", "var")


@dataclass(frozen=True)
class ScoreSpec:
    """Exploration score: ``uct`` adds 2*lam*sqrt(2 ln n_parent / n), ``var``
    adds 2*lam*sqrt(variance); lam = 0 recovers the greedy policy."""

    kind: str = "uct"
    lam: float = 0.5

    def __post_init__(self):
        if self.kind not in SCORE_KINDS:
            raise ValueError(f"score kind must be one of {SCORE_KINDS}, got {self.kind!r}")
        if not (math.isfinite(self.lam) and self.lam >= 0.0):
            raise ValueError(f"lam must be finite and non-negative, got {self.lam}")


@dataclass(frozen=True)
class SelectionResult:
    path: list[int]
    selected_node: int
    candidate_id: int
    acquisition_value: float


def node_score(tree: AcquisitionTree, k: int, spec: ScoreSpec) -> float:
    """Score of node ``k``; unvisited buckets score +inf so they get explored."""
    node = tree.nodes_.get(k) if hasattr(tree, "nodes_") else None
    if node is None or node.n == 0:
        return math.inf
    if spec.lam == 0.0:
        return node.value
    if spec.kind == "var":
        return node.value + 2.0 * spec.lam * math.sqrt(node.variance)
    if k == 0:
        raise ValueError("the root has no parent; its UCT score is undefined")
    parent = tree.nodes_.get((k - 1) // 2)
    if parent is None or parent.n == 0:
        raise ValueError(f"node {k} has an unvisited parent; UCT score undefined")
    return node.value + 2.0 * spec.lam * math.sqrt(2.0 * math.log(parent.n) / node.n)


def select_path(tree: AcquisitionTree, spec: ScoreSpec) -> list[int]:
    """Root-to-leaf indices through fitted nodes, argmax-score child each
    step, ties toward the left (more promising) child. Empty if the root is
    unfitted."""
    path: list[int] = []
    k = 0
    while tree.is_fitted(k):
        path.append(k)
        left, right = 2 * k + 1, 2 * k + 2
        k = left if node_score(tree, left, spec) >= node_score(tree, right, spec) else right
    return path


def select_candidate(
    tree: AcquisitionTree,
    path: list[int],
    pool: CandidatePool,
    obs: ObservationSet,
    retained_ids: set[int] | None = None,
) -> SelectionResult:
    """Backtrack along ``path`` and pick the best unobserved candidate.

    Membership of unobserved candidates in a path node's region is decided
    by routing them through the path classifiers from the root. The deepest
    path node whose region intersects the retained unobserved candidates
    wins; if no path node intersects them, retention is ignored and the
    whole unobserved pool competes at the root. Acquisition ties break
    toward the lowest candidate id.
    """
    if not path:
        raise ValueError("path must be non-empty; an unfitted root has no selection rule")
    observed = set(obs.ids())
    all_unobserved = np.array(
        [i for i in range(len(pool)) if i not in observed], dtype=np.int64
    )
    if all_unobserved.size == 0:
        raise PoolExhaustedError("every candidate in the pool has been observed")
    if retained_ids is None:
        base = all_unobserved
    else:
        base = np.array([i for i in all_unobserved if i in retained_ids], dtype=np.int64)

    if base.size == 0:
        # retention emptied the pool: fall back to the root over everything
        return _argmax_at(tree, path, path[0], all_unobserved, pool)

    # members[i] = retained unobserved candidates routed into path[i]
    members = [base]
    for i in range(len(path) - 1):
        current = members[-1]
        if current.size == 0:
            members.append(current)
            continue
        go_left = tree.route_mask(path[i], pool.features[current])
        keep = go_left if path[i + 1] == 2 * path[i] + 1 else ~go_left
        members.append(current[keep])

    for i in range(len(path) - 1, -1, -1):
        if members[i].size > 0:
            return _argmax_at(tree, path, path[i], members[i], pool)
    raise AssertionError("unreachable: the root member set was non-empty")


def _argmax_at(
    tree: AcquisitionTree,
    path: list[int],
    node_index: int,
    candidate_ids: np.ndarray,
    pool: CandidatePool,
) -> SelectionResult:
    values = np.atleast_1d(tree.node_acquisition(node_index, pool.features[candidate_ids]))
    best = int(np.argmax(values))  # first max wins: ids ascend, so lowest id
    return SelectionResult(
        path=list(path),
        selected_node=int(node_index),
        candidate_id=int(candidate_ids[best]),
        acquisition_value=float(values[best]),
    )
