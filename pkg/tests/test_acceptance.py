"""Acceptance suite: every criterion at its stated tolerance, one line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the PASS lines.
"""
import json
import math
import time

import numpy as np
import pytest
import scipy.stats

from acqtree import (
    AcquisitionTree,
    ClassifierParams,
    PoolExhaustedError,
    RngHandle,
    RunConfig,
    ScoreSpec,
    UtilitySpec,
    gap,
    avg_regret,
    games_howell,
    init_params,
    lfbo_grad,
    lfbo_loss,
    llm_cluster,
    predict,
    select_candidate,
    select_clusters,
    select_path,
    summarize_group,
    welch_anova,
)
from acqtree.runner import run, timing_sidecar_path
from acqtree.tree import node_depth

from conftest import endpoint_for, make_pool, make_text_pool, observe, simple_template

from test_stats import pairwise_oracle, pool_with_clusters, observe_all, welch_oracle


def report(number, text):
    print(f"\nACCEPTANCE {number}: PASS - {text}")


def test_criterion_1_levy1d_method_ordering():
    """Median final GAP: tree policy within 0.02 of root-only, both beat
    random by at least 0.05; 15 seeds, N=1000, n=10, T=30."""
    started = time.monotonic()

    def final_gaps(policy, **kw):
        gaps = []
        for seed in range(15):
            cfg = RunConfig(
                pool_source="levy", levy_dim=1, levy_n=1000, levy_seed=0,
                n_init=10, budget=30, seed=seed, policy=policy,
                utility="ei", gamma=0.5, lam=0.5, eta=0.01, min_leaf=2,
                score="uct", **kw,
            )
            gaps.append(run(cfg).records[-1]["gap"])
        return float(np.median(gaps))

    llmat = final_gaps("llmat", depth=2, clustering="kmeans", n_clusters=5, p_threshold=0.05)
    root = final_gaps("lfbo_root")
    random_policy = final_gaps("random")
    elapsed = time.monotonic() - started

    assert llmat >= root - 0.02, f"tree policy {llmat:.4f} vs root {root:.4f}"
    assert llmat >= random_policy + 0.05, f"tree {llmat:.4f} vs random {random_policy:.4f}"
    assert root >= random_policy + 0.05, f"root {root:.4f} vs random {random_policy:.4f}"
    assert elapsed < 300.0, f"took {elapsed:.0f}s, budget is 5 minutes"
    report(1, f"median GAP tree={llmat:.4f} root={root:.4f} random={random_policy:.4f} "
              f"({elapsed:.0f}s)")


def test_criterion_2_reduction_identity():
    """Depth-0 tree policy with clustering off selects byte-identically to
    the standalone root-only policy on 5 seeds."""
    for seed in range(5):
        base = dict(pool_source="levy", levy_dim=1, levy_n=200, levy_seed=0,
                    n_init=8, budget=8, epochs=15, clustering="none", seed=seed)
        a = run(RunConfig(policy="llmat", depth=0, **base))
        b = run(RunConfig(policy="lfbo_root", depth=3, **base))
        assert a.candidate_ids() == b.candidate_ids(), f"seed {seed} diverged"
    report(2, "depth-0 selections identical to root-only policy on 5 seeds")


def test_criterion_3_statistical_test_oracle_equivalence():
    """100 random instances: F and df to 1e-8, p to 1e-6; pairwise t, df, p
    likewise; total runtime under 10 seconds."""
    started = time.monotonic()
    gen = np.random.default_rng(2718)
    for _ in range(100):
        k = int(gen.integers(2, 7))
        samples = [
            gen.normal(loc=gen.uniform(-3, 3), scale=gen.uniform(0.3, 3.0),
                       size=int(gen.integers(3, 31))).tolist()
            for _ in range(k)
        ]
        groups = [summarize_group(i, s) for i, s in enumerate(samples)]

        f_ref, nu_ref, p_ref = welch_oracle(samples)
        ours = welch_anova(groups)
        assert ours.statistic == pytest.approx(f_ref, abs=1e-8, rel=1e-8)
        assert ours.df_denom == pytest.approx(nu_ref, abs=1e-8, rel=1e-8)
        assert ours.p_value == pytest.approx(p_ref, abs=1e-6)

        pairwise = {r.pair: r for r in games_howell(groups)}
        for i in range(k):
            for j in range(i + 1, k):
                t_ref, dfq_ref, pq_ref = pairwise_oracle(samples[i], samples[j])
                r = pairwise[(i, j)]
                assert r.statistic == pytest.approx(t_ref, abs=1e-6, rel=1e-6)
                assert r.df == pytest.approx(dfq_ref, abs=1e-6, rel=1e-6)
                assert r.p_value == pytest.approx(pq_ref, abs=1e-6)
    elapsed = time.monotonic() - started
    assert elapsed < 10.0, f"took {elapsed:.1f}s, budget is 10 seconds"
    report(3, f"100 instances matched the transcription oracle ({elapsed:.1f}s)")


def test_criterion_4_tree_partition_invariants():
    """200 randomized builds: children partition the parent's observations
    exactly and full-pool routing is a disjoint cover. Zero violations."""
    gen = np.random.default_rng(4242)
    violations = 0
    builds = 0
    while builds < 200:
        n = int(gen.integers(10, 201))
        d = int(gen.integers(1, 4))
        depth = int(gen.integers(0, 4))
        min_leaf = int(gen.choice([2, 5]))
        X = gen.normal(size=(n, d))
        y = gen.normal(size=n)
        meta = init_params(d, RngHandle(builds, "meta"))
        tree = AcquisitionTree(depth=depth, min_leaf=min_leaf, epochs=3).fit(
            X, y, meta=meta, rng=RngHandle(builds, "t")
        )
        builds += 1
        probe = gen.normal(size=(40, d))
        for k in tree.fitted_:
            if node_depth(k) >= depth:
                if 2 * k + 1 in tree.nodes_ or 2 * k + 2 in tree.nodes_:
                    violations += 1  # a maximum-depth node must never split
                continue
            parent = tree.nodes_[k].observed_ids
            left = tree.nodes_[2 * k + 1].observed_ids
            right = tree.nodes_[2 * k + 2].observed_ids
            if set(left) & set(right):
                violations += 1
            if sorted(left + right) != sorted(parent):
                violations += 1
            children = np.array([tree.route(k, row) for row in probe])
            mask = tree.route_mask(k, probe)
            if not set(children.tolist()) <= {2 * k + 1, 2 * k + 2}:
                violations += 1
            if not np.array_equal(mask, children == 2 * k + 1):
                violations += 1
    assert violations == 0
    report(4, "200 randomized builds, zero partition or routing violations")


def test_criterion_5_reptile_identities():
    """meta_rate 0 leaves the shared parameters bitwise unchanged; 1 copies
    the last-fitted node's parameters bitwise. 20 seeds."""
    for seed in range(20):
        gen = np.random.default_rng(seed)
        n = int(gen.integers(12, 60))
        X = gen.normal(size=(n, 2))
        y = gen.normal(size=n)
        meta = init_params(2, RngHandle(seed, "meta"))
        before = meta.to_vector().copy()

        frozen = AcquisitionTree(depth=2, meta_rate=0.0, epochs=3).fit(
            X, y, meta=meta, rng=RngHandle(seed, "t"))
        assert np.array_equal(frozen.meta_.to_vector(), before), f"seed {seed}: meta moved"
        assert np.array_equal(meta.to_vector(), before), f"seed {seed}: input mutated"

        full = AcquisitionTree(depth=2, meta_rate=1.0, epochs=3).fit(
            X, y, meta=meta, rng=RngHandle(seed, "t"))
        last = full.fitted_[-1]
        assert np.array_equal(
            full.meta_.to_vector(), full.nodes_[last].params.to_vector()
        ), f"seed {seed}: meta is not the last-fitted node"
    report(5, "meta-update identities bitwise exact on 20 seeds")


def test_criterion_6_lfbo_loss_correctness():
    """PI loss equals an independent cross-entropy to 1e-10 on 50 batches;
    analytic gradients match central differences within 1e-4 relative."""
    gen = np.random.default_rng(6)
    for trial in range(50):
        d = int(gen.integers(1, 5))
        params = init_params(d, RngHandle(trial, "bce"))
        X = gen.normal(size=(int(gen.integers(2, 64)), d))
        y = gen.normal(size=X.shape[0])
        tau = float(np.quantile(y, gen.uniform(0.2, 0.8)))
        probs = np.atleast_1d(predict(params, X))
        oracle = float(np.mean(
            -np.where(y > tau, 1.0, 0.0) * np.log(probs) - np.log1p(-probs)
        ))
        ours = lfbo_loss(params, X, y, UtilitySpec("pi", tau))
        assert ours == pytest.approx(oracle, abs=1e-10)

    for trial in range(8):
        gen2 = np.random.default_rng(100 + trial)
        d = int(gen2.integers(1, 5))
        n = int(gen2.integers(2, 9))
        params = init_params(d, RngHandle(trial, "grad"))
        X = gen2.normal(size=(n, d))
        y = gen2.normal(size=n)
        utility = UtilitySpec("pi" if trial % 2 else "ei", float(np.median(y)))
        _, grads = lfbo_grad(params, X, y, utility)
        analytic = np.concatenate([g.ravel() for g in grads])
        vector = params.to_vector()
        step = 1e-5
        numeric = np.empty_like(vector)
        for i in range(vector.size):
            plus, minus = vector.copy(), vector.copy()
            plus[i] += step
            minus[i] -= step
            numeric[i] = (
                lfbo_loss(ClassifierParams.from_vector(plus, params.layer_sizes), X, y, utility)
                - lfbo_loss(ClassifierParams.from_vector(minus, params.layer_sizes), X, y, utility)
            ) / (2 * step)
        rel = np.linalg.norm(analytic - numeric) / max(
            np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12
        )
        assert rel < 1e-4, f"instance {trial}: relative gradient error {rel:.2e}"
    report(6, "50 cross-entropy batches at 1e-10; gradient checks under 1e-4")


def test_criterion_7_selection_liveness():
    """500 fuzzed configurations; a valid unobserved candidate comes back
    whenever one exists. Zero failures."""
    gen = np.random.default_rng(777)
    checked = 0
    failures = 0
    trial = 0
    while checked < 500:
        trial += 1
        n = int(gen.integers(8, 40))
        d = int(gen.integers(1, 4))
        pool = make_pool(n=n, d=d, seed=int(gen.integers(1_000_000)))
        n_obs = int(gen.integers(4, n + 1))
        obs = observe(pool, gen.choice(n, size=n_obs, replace=False))
        tree = AcquisitionTree(depth=int(gen.integers(0, 4)), epochs=2).fit(
            pool.features[obs.ids()], obs.values(),
            ids=obs.ids(), meta=init_params(d, RngHandle(trial, "m")),
            rng=RngHandle(trial, "t"),
        )
        path = select_path(tree, ScoreSpec(["uct", "var"][trial % 2], gen.uniform(0, 1)))
        if not path:
            continue
        mode = trial % 3
        if mode == 0:
            retained = None
        elif mode == 1:
            retained = set()
        else:
            retained = {int(i) for i in gen.choice(n, size=int(gen.integers(1, n + 1)), replace=False)}
        checked += 1
        if n_obs == n:
            with pytest.raises(PoolExhaustedError):
                select_candidate(tree, path, pool, obs, retained)
            continue
        result = select_candidate(tree, path, pool, obs, retained)
        if result.candidate_id in set(obs.ids()) or not 0 <= result.candidate_id < n:
            failures += 1
    assert failures == 0
    report(7, f"{checked} fuzzed configurations, zero liveness failures")


def test_criterion_8_metric_formulas_and_zero_threshold():
    """Metric fixtures exact; GAP affine-invariant to 1e-12; p_threshold = 0
    retains every cluster on every fixture."""
    assert gap(10.0, 2.0, 10.0) == 1.0
    assert gap(2.0, 2.0, 10.0) == 0.0
    assert gap(6.0, 2.0, 10.0) == 0.5
    assert avg_regret([5.0, 5.0], 5.0) == 0.0
    assert avg_regret([5.0, 3.0], 5.0) == 1.0

    gen = np.random.default_rng(8)
    for _ in range(200):
        y0, yt, ys = sorted(gen.normal(size=3))
        a = gen.uniform(0.1, 10.0)
        b = gen.normal() * 50
        assert gap(a * yt + b, a * y0 + b, a * ys + b) == pytest.approx(
            gap(yt, y0, ys), abs=1e-12
        )

    fixtures = []
    for seed in range(10):
        g = np.random.default_rng(seed)
        k = int(g.integers(2, 6))
        fixtures.append(pool_with_clusters(
            {c: g.normal(g.uniform(-5, 5), g.uniform(0.1, 2), int(g.integers(1, 15))).tolist()
             for c in range(k)}
        ))
    for pool in fixtures:
        obs = observe_all(pool)
        expected = {int(c) for c in np.unique(pool.clusters)}
        assert select_clusters(obs, pool, 0.0) == expected
    report(8, "metric fixtures exact; affine invariance 1e-12; p=0 retains all")


def test_criterion_9_trace_determinism(tmp_path):
    """Two runs with one config and seed write byte-identical trace files."""
    cfg = RunConfig(pool_source="levy", levy_dim=1, levy_n=300, levy_seed=0,
                    clustering="kmeans", n_clusters=5, p_threshold=0.05,
                    policy="llmat", depth=2, n_init=10, budget=10, seed=3)
    path_a, path_b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    run(cfg).save(path_a)
    run(cfg).save(path_b)
    assert path_a.read_bytes() == path_b.read_bytes()
    assert timing_sidecar_path(path_a).exists()
    assert "build_s" not in path_a.read_text()
    report(9, "byte-identical traces; timings confined to the sidecar")


def test_criterion_10_llm_clusterer_robustness(mock_server, tmp_path):
    """Clean replies reproduce the mock mapping; corrupted replies fall back
    without aborting; a fully cached run issues zero requests."""
    pool = make_text_pool(n=8)
    template = simple_template(batch_size=5)
    endpoint = endpoint_for(mock_server)

    clean = llm_cluster(pool, template, endpoint, tmp_path / "clean.csv")
    assert clean.labels.tolist() == [i % 5 for i in range(8)]

    mock_server.behaviors = ["garbage", "clean"]
    mock_server.request_count = 0
    corrupted = llm_cluster(pool, template, endpoint, tmp_path / "corrupt.csv")
    assert corrupted.labels.tolist() == [2] * 5 + [0, 1, 2]

    mock_server.behaviors = ["clean"]
    before = mock_server.request_count
    cached = llm_cluster(pool, template, endpoint, tmp_path / "clean.csv")
    assert mock_server.request_count == before, "cached run touched the network"
    assert cached.labels.tolist() == clean.labels.tolist()
    report(10, "mock mapping reproduced; fallback on garbage; cache is offline")
