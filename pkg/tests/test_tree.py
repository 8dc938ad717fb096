import numpy as np
import pytest

from acqtree import AcquisitionTree, RngHandle, init_params, is_splitable
from acqtree.tree import node_depth


def make_data(seed=0, n=20, d=2):
    gen = np.random.default_rng(seed)
    return gen.normal(size=(n, d)), gen.normal(size=n)


def build(X, y, depth=2, eta=0.01, min_leaf=2, epochs=5, seed=0, meta=None, utility="ei"):
    meta = meta if meta is not None else init_params(X.shape[1], RngHandle(seed, "meta"))
    tree = AcquisitionTree(
        depth=depth, min_leaf=min_leaf, meta_rate=eta, epochs=epochs, utility=utility
    )
    return tree.fit(X, y, meta=meta, rng=RngHandle(seed, "tree"))


class TestIsSplitable:
    def test_single_class_not_splitable(self):
        assert not is_splitable([3.0, 3.0, 3.0, 3.0], 3.0, 2)

    def test_too_few_for_two_children(self):
        assert not is_splitable([1.0, 2.0, 3.0], 1.5, 2)

    def test_balanced_four_with_median_threshold(self):
        assert is_splitable([1.0, 2.0, 3.0, 4.0], 2.0, 2)


class TestBuild:
    def test_depth_zero_fits_only_root(self):
        X, y = make_data()
        tree = build(X, y, depth=0)
        assert tree.fitted_ == [0]
        assert tree.max_index == 0
        assert set(tree.nodes_) == {0}

    def test_eta_zero_leaves_meta_bitwise_unchanged(self):
        X, y = make_data(1)
        meta = init_params(2, RngHandle(1, "meta"))
        before = meta.to_vector()
        tree = build(X, y, eta=0.0, meta=meta)
        assert np.array_equal(tree.meta_.to_vector(), before)

    def test_eta_one_meta_equals_last_fitted_node(self):
        X, y = make_data(2)
        tree = build(X, y, eta=1.0)
        last = tree.fitted_[-1]
        assert np.array_equal(
            tree.meta_.to_vector(), tree.nodes_[last].params.to_vector()
        )

    def test_children_partition_parent_exactly(self):
        X, y = make_data(3, n=20)
        tree = build(X, y, depth=2)
        for k in tree.fitted_:
            if node_depth(k) >= tree.depth:
                continue
            parent = set(tree.nodes_[k].observed_ids)
            left = set(tree.nodes_[2 * k + 1].observed_ids)
            right = set(tree.nodes_[2 * k + 2].observed_ids)
            assert left | right == parent
            assert not left & right

    def test_each_observation_in_one_node_per_level(self):
        X, y = make_data(4, n=20)
        tree = build(X, y, depth=2)
        for depth in range(tree.depth + 1):
            level = [k for k in tree.nodes_ if node_depth(k) == depth]
            seen: list[int] = []
            for k in level:
                seen.extend(tree.nodes_[k].observed_ids)
            assert len(seen) == len(set(seen))

    def test_node_stats_match_recomputation(self):
        X, y = make_data(5, n=30)
        tree = build(X, y, depth=2)
        ids = list(range(30))
        for node in tree.nodes_.values():
            if node.n == 0:
                continue
            ys = y[[ids.index(i) for i in node.observed_ids]]
            assert node.value == pytest.approx(ys.mean(), abs=1e-12)
            assert node.variance == pytest.approx(ys.var(), abs=1e-12)

    def test_index_bound_and_no_leaf_split(self):
        X, y = make_data(6, n=60)
        tree = build(X, y, depth=2)
        bound = 2 ** (tree.depth + 1) - 2
        assert max(tree.nodes_) <= bound
        for k in tree.fitted_:
            if node_depth(k) == tree.depth:
                assert 2 * k + 1 not in tree.nodes_

    def test_rebuild_is_bitwise_identical(self):
        X, y = make_data(7)
        a = build(X, y, seed=9)
        b = build(X, y, seed=9)
        assert a.fitted_ == b.fitted_
        for k in a.fitted_:
            assert np.array_equal(
                a.nodes_[k].params.to_vector(), b.nodes_[k].params.to_vector()
            )

    def test_min_leaf_gate(self):
        X, y = make_data(8, n=3)
        tree = build(X, y, depth=1, min_leaf=2)
        # 3 observations < 2*min_leaf: root not splitable, nothing fitted
        assert tree.fitted_ == []

    def test_constant_values_fit_nothing(self):
        X, _ = make_data(9, n=10)
        tree = build(X, np.zeros(10), depth=1)
        assert tree.fitted_ == []

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_training_error_names_node(self):
        X, y = make_data(10)
        meta = init_params(2, RngHandle(0, "meta"))
        for w in meta.weights:
            w *= np.inf  # forces a non-finite loss in the root's training
        with pytest.raises(RuntimeError, match="node 0"):
            AcquisitionTree(depth=0, epochs=2).fit(X, y, meta=meta, rng=RngHandle(0, "t"))


class TestRouting:
    def test_route_goes_right_on_exact_half(self):
        X, y = make_data(11)
        tree = build(X, y, depth=1)
        root = tree.nodes_[0]
        zeroed = root.params.copy()
        for arr in zeroed.arrays():
            arr[:] = 0.0
        root.params = zeroed  # predict == 0.5 everywhere
        assert tree.route(0, X[0]) == 2

    def test_root_children_indices(self):
        X, y = make_data(12)
        tree = build(X, y, depth=1)
        assert tree.route(0, X[0]) in (1, 2)

    def test_full_pool_routing_covers_disjointly(self):
        X, y = make_data(13, n=40)
        tree = build(X, y, depth=2)
        pool_x = np.random.default_rng(99).normal(size=(100, 2))
        for k in tree.fitted_:
            if node_depth(k) >= tree.depth:
                continue
            children = [tree.route(k, row) for row in pool_x]
            assert set(children) <= {2 * k + 1, 2 * k + 2}
            mask = tree.route_mask(k, pool_x)
            assert np.array_equal(mask, np.array(children) == 2 * k + 1)

    def test_unfitted_node_route_raises(self):
        X, y = make_data(14)
        tree = build(X, y, depth=1)
        unfitted = [k for k in tree.nodes_ if not tree.nodes_[k].fitted]
        if unfitted:
            with pytest.raises(ValueError, match="not fitted"):
                tree.route(unfitted[0], X[0])
        with pytest.raises(KeyError):
            tree.route(99, X[0])


class TestNodeAcquisition:
    def test_delegates_to_classifier(self):
        from acqtree import acquisition

        X, y = make_data(15)
        tree = build(X, y, depth=1)
        k = tree.fitted_[0]
        ours = tree.node_acquisition(k, X[:5])
        direct = acquisition(tree.nodes_[k].params, X[:5])
        assert np.array_equal(np.atleast_1d(ours), np.atleast_1d(direct))

    def test_distinct_nodes_rank_differently(self):
        X, y = make_data(16, n=60)
        tree = build(X, y, depth=1, epochs=30)
        fitted = [k for k in tree.fitted_ if k > 0]
        assert fitted, "fixture should fit at least one child"
        probe = np.random.default_rng(1).normal(size=(50, 2))
        root_rank = np.argsort(tree.node_acquisition(0, probe))
        child_rank = np.argsort(tree.node_acquisition(fitted[0], probe))
        assert not np.array_equal(root_rank, child_rank)

    def test_unfitted_node_errors(self):
        X, y = make_data(17)
        tree = build(X, y, depth=1)
        unfitted = [k for k in tree.nodes_ if not tree.nodes_[k].fitted]
        if unfitted:
            with pytest.raises(ValueError, match="not fitted"):
                tree.node_acquisition(unfitted[0], X[:2])
