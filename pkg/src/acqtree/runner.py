"""Orchestration: config, the iterate-observe-update loop, and traces.

One run wires the modules together: build or load the pool, obtain cluster
labels once, draw the stratified initial set, then per iteration filter
clusters, rebuild the acquisition tree (carrying the meta parameters
across rounds), walk and backtrack the tree, query the oracle and record
metrics. Two invocations with the same config and seed produce
byte-identical trace files; wall-clock timings go to a separate sidecar.
"""
from __future__ import annotations

import configparser
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from ._rng import RngHandle
from .bench import LevySpec, make_levy_pool
from .classifier import TrainConfig, UtilitySpec, acquisition, init_params, quantile_threshold, train
from .clustering import kmeans_cluster
from .llm import LlmEndpointConfig, llm_cluster, load_label_file, load_template
from .metrics import avg_regret, gap
from .pool import CandidatePool, ObservationSet, PoolExhaustedError, load_pool, stratified_init
from .selection import ScoreSpec, select_candidate, select_path
from .stats import select_clusters
from .tree import AcquisitionTree

POLICIES = ("llmat", "lfbo_root", "random")
CLUSTERING_METHODS = ("none", "kmeans", "llm", "file")


@dataclass(frozen=True)
class RunConfig:
    # pool source: either a candidate file or a synthetic Levy spec
    pool_source: str = "levy"  # "levy" | "csv"
    pool_path: str | None = None
    pool_sense: str = "minimize"
    levy_dim: int = 1
    levy_n: int = 1000
    levy_low: float = -10.0
    levy_high: float = 10.0
    levy_seed: int = 0
    # clustering
    clustering: str = "none"
    n_clusters: int = 5
    label_file: str | None = None
    llm_task: str = "redoxmer"
    llm_template_file: str | None = None
    llm_batch_size: int = 50
    p_threshold: float = 0.0
    correction: str = "none"
    # algorithm
    policy: str = "llmat"
    utility: str = "ei"
    gamma: float = 0.5
    lam: float = 0.5
    eta: float = 0.01
    depth: int = 2
    min_leaf: int = 2
    score: str = "uct"
    epochs: int = 50
    batch_size: int = 256
    learning_rate: float = 1e-2
    weight_decay: float = 5e-4
    # run
    n_init: int = 10
    budget: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.pool_source not in ("levy", "csv"):
            raise ValueError(f"pool_source must be 'levy' or 'csv', got {self.pool_source!r}")
        if self.pool_source == "csv" and not self.pool_path:
            raise ValueError("pool_source 'csv' requires pool_path")
        if self.clustering not in CLUSTERING_METHODS:
            raise ValueError(f"clustering must be one of {CLUSTERING_METHODS}")
        if self.clustering in ("llm", "file") and not self.label_file:
            raise ValueError(f"clustering '{self.clustering}' requires label_file")
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}")
        if not 0.0 <= self.p_threshold <= 1.0:
            raise ValueError("p_threshold must lie in [0, 1]")
        if self.n_init < 1 or self.budget < 1:
            raise ValueError("n_init and budget must be positive")
        if self.depth < 0 or self.min_leaf < 1:
            raise ValueError("depth must be >= 0 and min_leaf >= 1")


_CONFIG_SECTIONS = {
    "pool": ("pool_source", "pool_path", "pool_sense", "levy_dim", "levy_n",
             "levy_low", "levy_high", "levy_seed"),
    "clustering": ("clustering", "n_clusters", "label_file", "llm_task",
                   "llm_template_file", "llm_batch_size", "p_threshold", "correction"),
    "algorithm": ("policy", "utility", "gamma", "lam", "eta", "depth", "min_leaf",
                  "score", "epochs", "batch_size", "learning_rate", "weight_decay"),
    "run": ("n_init", "budget", "seed"),
}

_FIELD_TYPES = {f.name: f.type for f in RunConfig.__dataclass_fields__.values()}


def _coerce(name: str, raw: str):
    text = raw.strip()
    kind = _FIELD_TYPES[name]
    if kind.startswith("int"):
        return int(text)
    if kind.startswith("float"):
        return float(text)
    if text.lower() in ("none", ""):
        return None
    return text


def load_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    """Read a sectioned key=value config file, then apply overrides."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = parser.read(path)
    if not read:
        raise FileNotFoundError(f"config file not found: {path}")
    values: dict = {}
    for section, names in _CONFIG_SECTIONS.items():
        if not parser.has_section(section):
            continue
        for key in parser[section]:
            if key not in names:
                raise ValueError(f"unknown config key [{section}] {key}")
            values[key] = _coerce(key, parser[section][key])
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


def build_pool(cfg: RunConfig) -> CandidatePool:
    if cfg.pool_source == "csv":
        return load_pool(cfg.pool_path, cfg.pool_sense)
    spec = LevySpec(dim=cfg.levy_dim, low=cfg.levy_low, high=cfg.levy_high,
                    n=cfg.levy_n, seed=cfg.levy_seed)
    return make_levy_pool(spec)


def assign_clusters(cfg: RunConfig, pool: CandidatePool, root: RngHandle) -> CandidatePool:
    """Attach cluster labels once, before the loop. Never touches the network:
    the `cluster` CLI subcommand is the only place requests are issued."""
    if cfg.clustering == "none":
        return pool
    if cfg.clustering == "kmeans":
        assignment = kmeans_cluster(pool, cfg.n_clusters, root.child("cluster/kmeans"))
    elif cfg.clustering == "file":
        assignment = load_label_file(cfg.label_file, len(pool), cfg.n_clusters)
    else:  # llm: replay the label cache offline
        template = load_template(cfg.llm_task, path=cfg.llm_template_file,
                                 batch_size=cfg.llm_batch_size)
        assignment = llm_cluster(pool, template, endpoint=None, cache_path=cfg.label_file,
                                 n_clusters=cfg.n_clusters, allow_network=False)
    return pool.with_clusters(assignment.labels)


@dataclass
class RunTrace:
    header: dict
    records: list[dict] = field(default_factory=list)
    timings: list[dict] = field(default_factory=list)
    exhausted: bool = False

    def candidate_ids(self) -> list[int]:
        return [r["candidate_id"] for r in self.records]

    def save(self, path: str | Path) -> Path:
        """Write JSON-lines trace plus a timing sidecar next to it."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            fh.write(json.dumps({"type": "header", **self.header}, sort_keys=True) + "\n")
            for record in self.records:
                fh.write(json.dumps({"type": "iteration", **record}, sort_keys=True) + "\n")
            fh.write(json.dumps({"type": "end", "iterations": len(self.records),
                                 "exhausted": self.exhausted}, sort_keys=True) + "\n")
        sidecar = timing_sidecar_path(path)
        sidecar.write_text(json.dumps({"per_iteration": self.timings}, sort_keys=True))
        return path

    @staticmethod
    def load(path: str | Path) -> "RunTrace":
        header, records, exhausted = {}, [], False
        with open(path) as fh:
            for line in fh:
                obj = json.loads(line)
                kind = obj.pop("type")
                if kind == "header":
                    header = obj
                elif kind == "iteration":
                    records.append(obj)
                elif kind == "end":
                    exhausted = obj.get("exhausted", False)
        return RunTrace(header=header, records=records, exhausted=exhausted)


def timing_sidecar_path(trace_path: str | Path) -> Path:
    trace_path = Path(trace_path)
    return trace_path.with_name(trace_path.stem + ".timing.json")


def _fallback_root_select(cfg, pool, obs, retained_ids, meta, rng):
    """Plain classifier over all observations when no tree node is fitted."""
    ys = obs.values()
    tau = quantile_threshold(ys, cfg.gamma)
    params = train(
        meta,
        pool.features[obs.ids()],
        ys,
        UtilitySpec(cfg.utility, tau),
        TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size,
                    learning_rate=cfg.learning_rate, weight_decay=cfg.weight_decay,
                    gamma=cfg.gamma),
        rng,
    )
    observed = set(obs.ids())
    candidates = [i for i in range(len(pool)) if i not in observed]
    if not candidates:
        raise PoolExhaustedError("every candidate in the pool has been observed")
    if retained_ids is not None:
        kept = [i for i in candidates if i in retained_ids]
        candidates = kept or candidates
    values = np.atleast_1d(acquisition(params, pool.features[candidates]))
    best = int(np.argmax(values))
    return candidates[best], float(values[best])


def _tree_for(cfg: RunConfig) -> AcquisitionTree:
    depth = 0 if cfg.policy == "lfbo_root" else cfg.depth
    return AcquisitionTree(
        depth=depth,
        min_leaf=cfg.min_leaf,
        meta_rate=cfg.eta,
        utility=cfg.utility,
        gamma=cfg.gamma,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        weight_decay=cfg.weight_decay,
    )


def run(cfg: RunConfig) -> RunTrace:
    """Execute one optimization run and return its trace."""
    root = RngHandle(cfg.seed)
    pool = build_pool(cfg)
    pool = assign_clusters(cfg, pool, root)

    obs = stratified_init(pool, cfg.n_init, root.child("init"))
    meta = init_params(pool.dim, root.child("meta-init"))
    score_spec = ScoreSpec(cfg.score, cfg.lam)
    filtering = cfg.policy == "llmat" and pool.clusters is not None and cfg.p_threshold > 0.0

    y_opt = pool.best_internal()
    y_init = obs.best_value()
    trace = RunTrace(
        header={
            "config": asdict(cfg),
            "version": __version__,
            "pool_digest": pool.digest(),
            "pool_size": len(pool),
            "dim": pool.dim,
            "sense": pool.sense,
            "y_opt_internal": y_opt,
            "y_init_internal": y_init,
            "init_ids": obs.ids(),
        }
    )

    best = y_init
    queried: list[float] = []
    for t in range(cfg.budget):
        if len(obs) >= len(pool):
            trace.exhausted = True
            break
        iter_start = time.monotonic()

        retained_labels: list[int] | None = None
        retained_ids: set[int] | None = None
        if filtering:
            kept = select_clusters(obs, pool, cfg.p_threshold, cfg.correction)
            retained_labels = sorted(kept)
            if len(kept) < len(np.unique(pool.clusters)):
                retained_ids = {
                    i for i in range(len(pool)) if int(pool.clusters[i]) in kept
                }

        build_seconds = 0.0
        if cfg.policy == "random":
            observed = set(obs.ids())
            open_ids = [i for i in range(len(pool)) if i not in observed]
            gen = root.child(f"t{t}/random").generator()
            candidate_id = int(open_ids[int(gen.integers(len(open_ids)))])
            path: list[int] = []
            selected_node = None
            acq_value = None
            tree_summary: list[dict] = []
        else:
            build_start = time.monotonic()
            tree = _tree_for(cfg).fit(
                pool.features[obs.ids()],
                obs.values(),
                ids=obs.ids(),
                meta=meta,
                rng=root.child(f"t{t}/tree"),
            )
            meta = tree.meta_
            build_seconds = time.monotonic() - build_start
            tree_summary = tree.summary()
            path = select_path(tree, score_spec)
            if path:
                result = select_candidate(tree, path, pool, obs, retained_ids)
                candidate_id = result.candidate_id
                selected_node = result.selected_node
                acq_value = result.acquisition_value
            else:
                candidate_id, acq_value = _fallback_root_select(
                    cfg, pool, obs, retained_ids, meta, root.child(f"t{t}/fallback")
                )
                selected_node = None

        y_internal = pool.oracle_query(candidate_id)
        obs.add(candidate_id, y_internal)
        queried.append(y_internal)
        best = max(best, y_internal)
        select_seconds = time.monotonic() - iter_start - build_seconds

        trace.records.append(
            {
                "t": t,
                "retained_clusters": retained_labels,
                "tree": tree_summary,
                "path": path,
                "selected_node": selected_node,
                "candidate_id": candidate_id,
                "acquisition_value": acq_value,
                "y": pool.to_native(y_internal),
                "best": pool.to_native(best),
                "gap": gap(best, y_init, y_opt),
                "regret": avg_regret(queried, y_opt),
            }
        )
        trace.timings.append(
            {
                "t": t,
                "build_s": build_seconds,
                "select_s": select_seconds,
                "total_s": time.monotonic() - iter_start,
            }
        )
    return trace


def replay_metrics(trace: RunTrace) -> tuple[np.ndarray, np.ndarray]:
    """Recompute GAP and regret from the raw (id, y) stream of a trace."""
    sense = trace.header["sense"]
    sign = 1.0 if sense == "maximize" else -1.0
    y_opt = trace.header["y_opt_internal"]
    y_init = trace.header["y_init_internal"]
    ys = np.array([sign * r["y"] for r in trace.records])
    best = np.maximum.accumulate(np.maximum(ys, y_init))
    gaps = np.array([gap(b, y_init, y_opt) for b in best])
    regrets = np.cumsum(y_opt - ys) / np.arange(1, ys.size + 1)
    return gaps, regrets
