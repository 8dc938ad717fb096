"""Candidate pools, observations, and deterministic initialization.

A pool is the finite discrete search space: every candidate carries a
feature vector and a hidden ground-truth property value. Internally the
optimizer always maximizes; minimization tasks are negated at ingestion and
converted back whenever values are reported.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from ._rng import RngHandle

SENSES = ("maximize", "minimize")


class PoolFormatError(ValueError):
    """Raised when a candidate file violates the pool schema."""


class PoolExhaustedError(RuntimeError):
    """Raised when every candidate in the pool has already been observed."""


@dataclass(frozen=True)
class Candidate:
    """One pool member. ``features`` are the standardized coordinates."""

    id: int
    features: np.ndarray
    oracle_value: float  # internal (maximization) orientation
    text: str | None = None
    cluster: int | None = None


@dataclass(frozen=True)
class Observation:
    candidate_id: int
    y: float  # internal orientation


class ObservationSet:
    """Ordered collection of (candidate id, observed value) pairs.

    Insertion order is preserved; duplicate candidate ids are rejected.
    """

    def __init__(self, observations: Sequence[Observation] = ()):
        self._obs: list[Observation] = []
        self._ids: set[int] = set()
        for ob in observations:
            self.add(ob.candidate_id, ob.y)

    def add(self, candidate_id: int, y: float) -> None:
        if candidate_id in self._ids:
            raise ValueError(f"candidate {candidate_id} already observed")
        if not np.isfinite(y):
            raise ValueError(f"observed value for candidate {candidate_id} is not finite")
        self._obs.append(Observation(int(candidate_id), float(y)))
        self._ids.add(int(candidate_id))

    def ids(self) -> list[int]:
        return [ob.candidate_id for ob in self._obs]

    def values(self) -> np.ndarray:
        return np.array([ob.y for ob in self._obs], dtype=np.float64)

    def best_value(self) -> float:
        if not self._obs:
            raise ValueError("empty observation set has no best value")
        return max(ob.y for ob in self._obs)

    def __contains__(self, candidate_id: int) -> bool:
        return candidate_id in self._ids

    def __len__(self) -> int:
        return len(self._obs)

    def __iter__(self) -> Iterator[Observation]:
        return iter(self._obs)


class CandidatePool:
    """Immutable candidate set with standardized features.

    Features are z-scored per dimension with full-pool statistics computed
    once at construction; dimensions with zero raw variance map to all-zero
    columns. Oracle values are stored in internal (maximization)
    orientation: raw values are negated when ``sense == "minimize"``.
    """

    def __init__(
        self,
        features: np.ndarray,
        oracle_values: np.ndarray,
        sense: str,
        text: Sequence[str] | None = None,
        clusters: Sequence[int] | None = None,
    ):
        if sense not in SENSES:
            raise ValueError(f"sense must be one of {SENSES}, got {sense!r}")
        raw = np.asarray(features, dtype=np.float64)
        if raw.ndim != 2 or raw.shape[1] < 1:
            raise ValueError("features must be a non-empty 2-D array")
        if not np.isfinite(raw).all():
            raise ValueError("features contain non-finite values")
        y_raw = np.asarray(oracle_values, dtype=np.float64).ravel()
        if y_raw.shape[0] != raw.shape[0]:
            raise ValueError("oracle values and features disagree on pool size")
        if not np.isfinite(y_raw).all():
            raise ValueError("oracle values contain non-finite entries")

        self.sense = sense
        self.raw_features = raw
        self.feature_mean = raw.mean(axis=0)
        self.feature_std = raw.std(axis=0)
        safe_std = np.where(self.feature_std > 0.0, self.feature_std, 1.0)
        self.features = (raw - self.feature_mean) / safe_std
        self.oracle_raw = y_raw
        self.oracle_internal = y_raw if sense == "maximize" else -y_raw
        self.text = list(text) if text is not None else None
        if self.text is not None and len(self.text) != len(self):
            raise ValueError("text column length does not match pool size")
        if clusters is not None:
            lab = np.asarray(clusters, dtype=np.int64).ravel()
            if lab.shape[0] != len(self):
                raise ValueError("cluster column length does not match pool size")
            if (lab < 0).any():
                raise ValueError("cluster labels must be non-negative")
            self.clusters = lab
        else:
            self.clusters = None
        for arr in (self.raw_features, self.features, self.oracle_raw, self.oracle_internal):
            arr.setflags(write=False)
        if self.clusters is not None:
            self.clusters.setflags(write=False)

    def __len__(self) -> int:
        return self.raw_features.shape[0]

    @property
    def dim(self) -> int:
        return self.raw_features.shape[1]

    def candidate(self, candidate_id: int) -> Candidate:
        self._check_id(candidate_id)
        return Candidate(
            id=int(candidate_id),
            features=self.features[candidate_id],
            oracle_value=float(self.oracle_internal[candidate_id]),
            text=self.text[candidate_id] if self.text is not None else None,
            cluster=int(self.clusters[candidate_id]) if self.clusters is not None else None,
        )

    def oracle_query(self, candidate_id: int) -> float:
        """Reveal the internal-orientation oracle value of one candidate."""
        self._check_id(candidate_id)
        return float(self.oracle_internal[candidate_id])

    def best_internal(self) -> float:
        return float(self.oracle_internal.max())

    def to_native(self, y_internal: float) -> float:
        return float(y_internal) if self.sense == "maximize" else -float(y_internal)

    def with_clusters(self, labels: Sequence[int]) -> "CandidatePool":
        return CandidatePool(
            self.raw_features,
            self.oracle_raw,
            self.sense,
            text=self.text,
            clusters=labels,
        )

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.sense.encode())
        h.update(self.raw_features.tobytes())
        h.update(self.oracle_raw.tobytes())
        if self.clusters is not None:
            h.update(self.clusters.tobytes())
        return h.hexdigest()

    def _check_id(self, candidate_id: int) -> None:
        if not 0 <= candidate_id < len(self):
            raise KeyError(f"candidate id {candidate_id} not in pool of size {len(self)}")


def _parse_header(fields: list[str]) -> tuple[bool, bool, int]:
    """Validate the column layout ``id,y[,text][,cluster],f0..f{d-1}``."""
    if len(fields) < 3 or fields[0] != "id" or fields[1] != "y":
        raise PoolFormatError(
            "header must start with 'id,y' followed by optional 'text', "
            f"'cluster' and feature columns, got {fields!r}"
        )
    pos = 2
    has_text = pos < len(fields) and fields[pos] == "text"
    if has_text:
        pos += 1
    has_cluster = pos < len(fields) and fields[pos] == "cluster"
    if has_cluster:
        pos += 1
    feature_cols = fields[pos:]
    expected = [f"f{i}" for i in range(len(feature_cols))]
    if not feature_cols or feature_cols != expected:
        raise PoolFormatError(
            f"feature columns must be f0..f{{d-1}} in order, got {feature_cols!r}"
        )
    return has_text, has_cluster, len(feature_cols)


def _parse_float(value: str, row: int, column: str) -> float:
    try:
        out = float(value)
    except ValueError:
        raise PoolFormatError(f"row {row}, column '{column}': not a number: {value!r}") from None
    if not np.isfinite(out):
        raise PoolFormatError(f"row {row}, column '{column}': non-finite value {value!r}")
    return out


def _parse_int(value: str, row: int, column: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise PoolFormatError(f"row {row}, column '{column}': not an integer: {value!r}") from None


def _rows_from_json(path: Path) -> list[dict]:
    data = json.loads(path.read_text())
    if isinstance(data, dict):
        data = data.get("candidates", data)
    if not isinstance(data, list):
        raise PoolFormatError("JSON pool must be a list of candidate objects")
    return data


def load_pool(path: str | Path, sense: str) -> CandidatePool:
    """Ingest a candidate pool from CSV (or JSON with the same field names).

    CSV header: ``id,y[,text][,cluster],f0,...,f{d-1}``. Ids must be unique
    and form the dense range 0..N-1; any formatting problem raises
    :class:`PoolFormatError` naming the offending row and column.
    """
    path = Path(path)
    if not path.exists():
        raise PoolFormatError(f"pool file not found: {path}")
    if path.suffix.lower() == ".json":
        records = []
        for row_no, obj in enumerate(_rows_from_json(path), start=1):
            if "id" not in obj or "y" not in obj:
                raise PoolFormatError(f"row {row_no}: missing 'id' or 'y' field")
            feats = []
            i = 0
            while f"f{i}" in obj:
                feats.append(_parse_float(str(obj[f"f{i}"]), row_no, f"f{i}"))
                i += 1
            if not feats:
                raise PoolFormatError(f"row {row_no}: no feature fields f0..")
            records.append(
                (
                    _parse_int(str(obj["id"]), row_no, "id"),
                    _parse_float(str(obj["y"]), row_no, "y"),
                    str(obj["text"]) if obj.get("text") is not None else None,
                    _parse_int(str(obj["cluster"]), row_no, "cluster")
                    if obj.get("cluster") is not None
                    else None,
                    feats,
                )
            )
        has_text = any(r[2] is not None for r in records)
        has_cluster = any(r[3] is not None for r in records)
    else:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise PoolFormatError("pool file is empty") from None
            has_text, has_cluster, d = _parse_header([c.strip() for c in header])
            width = 2 + has_text + has_cluster + d
            records = []
            for row_no, row in enumerate(reader, start=1):
                if not row:
                    continue
                if len(row) != width:
                    raise PoolFormatError(
                        f"row {row_no}: expected {width} columns, got {len(row)}"
                    )
                pos = 2
                text = row[pos] if has_text else None
                pos += has_text
                cluster = _parse_int(row[pos], row_no, "cluster") if has_cluster else None
                pos += has_cluster
                records.append(
                    (
                        _parse_int(row[0], row_no, "id"),
                        _parse_float(row[1], row_no, "y"),
                        text,
                        cluster,
                        [_parse_float(v, row_no, f"f{j}") for j, v in enumerate(row[pos:])],
                    )
                )
    if not records:
        raise PoolFormatError("pool file contains no candidates")

    n = len(records)
    seen: set[int] = set()
    for cid, *_ in records:
        if cid in seen:
            raise PoolFormatError(f"duplicate candidate id {cid}")
        seen.add(cid)
    missing = set(range(n)) - seen
    if missing:
        raise PoolFormatError(
            f"candidate ids must be contiguous 0..{n - 1}; missing {sorted(missing)[:5]}"
        )
    records.sort(key=lambda r: r[0])

    dims = {len(r[4]) for r in records}
    if len(dims) != 1:
        raise PoolFormatError(f"inconsistent feature dimensions: {sorted(dims)}")
    features = np.array([r[4] for r in records], dtype=np.float64)
    ys = np.array([r[1] for r in records], dtype=np.float64)
    text = [r[2] for r in records] if has_text else None
    clusters = [r[3] for r in records] if has_cluster else None
    if clusters is not None and any(c is None for c in clusters):
        raise PoolFormatError("cluster column present but some rows lack a label")
    return CandidatePool(features, ys, sense, text=text, clusters=clusters)


def save_pool(pool: CandidatePool, path: str | Path) -> None:
    """Write a pool back out in the ingestion CSV format (raw orientation)."""
    path = Path(path)
    has_text = pool.text is not None
    has_cluster = pool.clusters is not None
    header = ["id", "y"]
    if has_text:
        header.append("text")
    if has_cluster:
        header.append("cluster")
    header += [f"f{i}" for i in range(pool.dim)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(len(pool)):
            row: list = [i, repr(float(pool.oracle_raw[i]))]
            if has_text:
                row.append(pool.text[i])
            if has_cluster:
                row.append(int(pool.clusters[i]))
            row += [repr(float(v)) for v in pool.raw_features[i]]
            writer.writerow(row)


def _round_robin_allocation(sizes: dict[int, int], total: int) -> dict[int, int]:
    """Deal ``total`` slots one at a time across clusters in label order,
    skipping clusters whose capacity is used up."""
    alloc = {label: 0 for label in sorted(sizes)}
    remaining = total
    while remaining > 0:
        progressed = False
        for label in sorted(sizes):
            if remaining == 0:
                break
            if alloc[label] < sizes[label]:
                alloc[label] += 1
                remaining -= 1
                progressed = True
        if not progressed:
            break
    return alloc


def stratified_init(pool: CandidatePool, n: int, rng: RngHandle) -> ObservationSet:
    """Draw the initial observation set.

    With cluster labels, slots are allocated round-robin across non-empty
    clusters (leftover slots go to the lowest labels) and drawn uniformly
    without replacement within each cluster. Without labels the draw is
    uniform without replacement over the whole pool. At most ``len(pool)``
    candidates are drawn.
    """
    if n < 1:
        raise ValueError(f"initial sample count must be >= 1, got {n}")
    total = min(n, len(pool))
    gen = rng.generator()
    obs = ObservationSet()
    if pool.clusters is None:
        chosen = gen.choice(len(pool), size=total, replace=False)
        for cid in chosen:
            obs.add(int(cid), pool.oracle_query(int(cid)))
        return obs

    members: dict[int, np.ndarray] = {}
    for label in np.unique(pool.clusters):
        members[int(label)] = np.flatnonzero(pool.clusters == label)
    alloc = _round_robin_allocation({k: len(v) for k, v in members.items()}, total)
    for label in sorted(members):
        take = alloc[label]
        if take == 0:
            continue
        chosen = gen.choice(members[label], size=take, replace=False)
        for cid in chosen:
            obs.add(int(cid), pool.oracle_query(int(cid)))
    return obs
