import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from liftgraph.autodiff import Tape, backward, constant, sum_all
from liftgraph.graphs import Graph, normalize_augment
from liftgraph.pooling import (
    OpCounter,
    PoolConfig,
    PoolParams,
    classical_lift_1d,
    classical_lift_1d_inverse,
    coarsen,
    compute_scores,
    lift,
    liftpool,
    select_topk,
    topk_count,
)
from liftgraph.selftest import (
    check_baseline_equivalence,
    check_lift_work_bound,
    check_locality,
    check_score_range,
    check_zero_lift_identity,
    random_graph,
    sagpool_reference,
)

ONE_GRAPH = np.zeros(3, dtype=np.intp)


def path3():
    return Graph.build(3, [(0, 1, 1.0), (1, 2, 1.0)], np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]))


def path3_na():
    g = path3()
    return g, normalize_augment(g, "paper_literal", 1.0)


class TestComputeScores:
    def test_hand_example(self):
        g, na = path3_na()
        s = compute_scores(na, constant(g.features), constant([[1.0], [-1.0]]))
        np.testing.assert_allclose(
            s.values[:, 0], [math.tanh(0.5), -math.tanh(0.5), -math.tanh(0.5)], atol=1e-15
        )

    def test_zero_weights_zero_scores(self):
        g, na = path3_na()
        s = compute_scores(na, constant(g.features), constant(np.zeros((2, 1))))
        assert np.array_equal(s.values, np.zeros((3, 1)))

    def test_zero_features_zero_scores(self):
        g, na = path3_na()
        s = compute_scores(na, constant(np.zeros((3, 2))), constant([[1.0], [2.0]]))
        assert np.array_equal(s.values, np.zeros((3, 1)))


class TestSelectTopk:
    def test_from_scores_example(self):
        t = math.tanh(0.5)
        preserved, removed = select_topk(np.array([t, -t, -t]), ONE_GRAPH, 1 / 3)
        assert preserved == [0] and removed == [1, 2]

    def test_ratio_one_keeps_all_sorted(self):
        preserved, removed = select_topk(np.array([0.1, 0.9, 0.5]), ONE_GRAPH, 1.0)
        assert preserved == [1, 2, 0] and removed == []

    def test_two_thirds(self):
        preserved, removed = select_topk(np.array([0.9, 0.1, 0.5]), ONE_GRAPH, 2 / 3)
        assert preserved == [0, 2] and removed == [1]

    def test_tie_break_smaller_index(self):
        preserved, _ = select_topk(np.array([0.5, 0.5, 0.1]), ONE_GRAPH, 1 / 3)
        assert preserved == [0]

    def test_per_graph_independence(self):
        scores = np.array([0.9, 0.1, 0.2, 0.8])
        mem = np.array([0, 0, 1, 1])
        preserved, removed = select_topk(scores, mem, 0.5)
        assert preserved == [0, 3] and removed == [1, 2]

    def test_ratio_validated(self):
        with pytest.raises(ValueError):
            select_topk(np.array([0.5]), np.zeros(1, dtype=int), 0.0)

    def test_topk_count_rounding(self):
        assert topk_count(0.5, 8) == 4
        assert topk_count(0.1, 3) == 1
        assert topk_count(1.0, 5) == 5
        assert topk_count(0.3, 10) == 3  # float noise must not inflate the ceiling
        assert topk_count(0.01, 4) == 1  # floor of one node


class TestLift:
    def test_hand_example(self):
        g, na = path3_na()
        h = constant([[1.0, 0.5], [1.0, 1.5], [1.0, 1.5]])
        tape = Tape()
        ones = (tape.leaf(np.ones((1, 2))), tape.leaf(np.ones((1, 2))))
        hp, hr = lift(na, h, [0], [1, 2], [ones])
        assert hr.values.tolist() == [[0.5, 1.25], [1.0, 1.5]]
        assert hp.values.tolist() == [[1.25, 1.125]]

    def test_zero_diagonals_identity(self):
        g, na = path3_na()
        h = constant([[1.0, 0.5], [1.0, 1.5], [1.0, 1.5]])
        tape = Tape()
        zeros = (tape.leaf(np.zeros((1, 2))), tape.leaf(np.zeros((1, 2))))
        hp, hr = lift(na, h, [0], [1, 2], [zeros])
        assert np.array_equal(hp.values, h.values[[0]])
        assert np.array_equal(hr.values, h.values[[1, 2]])

    def test_unreached_removed_rows_untouched(self):
        # 0-1 edge only; node 2 is isolated from the preserved set
        g = Graph.build(3, [(0, 1, 1.0)], np.array([[1.0], [2.0], [3.0]]))
        na = normalize_augment(g, "symmetric_sqrt", 1.0)
        tape = Tape()
        ones = (tape.leaf(np.ones((1, 1))), tape.leaf(np.ones((1, 1))))
        hp, hr = lift(na, constant(g.features), [0], [1, 2], [ones])
        assert hr.values[1, 0] == 3.0  # no preserved neighbor: row unchanged

    def test_empty_removed_passes_through(self):
        g, na = path3_na()
        tape = Tape()
        ones = (tape.leaf(np.ones((1, 2))), tape.leaf(np.ones((1, 2))))
        h = constant([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        hp, hr = lift(na, h, [2, 0, 1], [], [ones])
        assert hr is None
        assert np.array_equal(hp.values, h.values[[2, 0, 1]])

    def test_empty_preserved_rejected(self):
        g, na = path3_na()
        with pytest.raises(ValueError, match="preserved"):
            lift(na, constant(np.zeros((3, 2))), [], [0, 1, 2], [])

    def test_wrong_diagonal_length_rejected(self):
        g, na = path3_na()
        tape = Tape()
        bad = (tape.leaf(np.ones((1, 3))), tape.leaf(np.ones((1, 3))))
        with pytest.raises(ValueError, match="diagonals"):
            lift(na, constant(np.zeros((3, 2))), [0], [1, 2], [bad])

    def test_fully_differentiable(self):
        g, na = path3_na()
        tape = Tape()
        h = tape.leaf([[1.0, 0.5], [1.0, 1.5], [1.0, 1.5]])
        tp, tu = tape.leaf(np.ones((1, 2))), tape.leaf(np.ones((1, 2)))
        hp, _ = lift(na, h, [0], [1, 2], [(tp, tu)])
        grads = backward(tape, sum_all(hp))
        assert {h.node_id, tp.node_id, tu.node_id} <= set(grads)

    def test_stacking_applies_layers_in_order(self):
        g, na = path3_na()
        h = constant([[1.0, 0.5], [1.0, 1.5], [1.0, 1.5]])
        tape = Tape()
        layer = lambda: (tape.leaf(np.ones((1, 2))), tape.leaf(np.ones((1, 2))))
        hp1, hr1 = lift(na, h, [0], [1, 2], [layer()])
        hp2, hr2 = lift(na, h, [0], [1, 2], [layer(), layer()])
        # second layer starts from the first layer's outputs
        tape2 = Tape()
        m = constant(na.matrix[np.ix_([1, 2], [0])])
        pred = np.maximum(m.values @ hp1.values, 0.0)
        hr_expect = hr1.values - pred
        upd = np.maximum(m.values.T @ hr_expect, 0.0)
        np.testing.assert_allclose(hr2.values, hr_expect, atol=1e-15)
        np.testing.assert_allclose(hp2.values, hp1.values + upd, atol=1e-15)


class TestCoarsen:
    def test_continues_lift_example(self):
        g, na = path3_na()
        scores = constant([[0.4], [-0.4], [-0.4]])
        hp = constant([[1.25, 1.125]])
        coarse, x = coarsen(g, hp, [0], scores, gate_with_scores=False)
        assert coarse.num_nodes == 1 and coarse.edges() == []
        assert x.values.tolist() == [[1.25, 1.125]]

    def test_gating_scales_by_score(self):
        g, na = path3_na()
        s = math.tanh(0.5)
        scores = constant([[s], [-s], [-s]])
        hp = constant([[1.25, 1.125]])
        _, x = coarsen(g, hp, [0], scores, gate_with_scores=True)
        np.testing.assert_allclose(x.values, [[1.25 * s, 1.125 * s]], atol=1e-15)

    def test_ratio_one_isomorphic(self):
        g, na = path3_na()
        scores = constant([[0.3], [0.9], [0.1]])
        preserved, _ = select_topk(scores.values[:, 0], ONE_GRAPH, 1.0)
        hp = constant(g.features[preserved])
        coarse, x = coarsen(g, hp, preserved, scores, gate_with_scores=False)
        assert coarse.num_nodes == 3
        # node order is score order: old 1 -> new 0, old 0 -> new 1, old 2 -> new 2
        assert preserved == [1, 0, 2]
        assert coarse.edges() == [(0, 1, 1.0), (0, 2, 1.0)]


class TestLiftpool:
    def test_three_node_end_to_end(self):
        from liftgraph.pooling import LiftParams, ScoreParams

        g, na = path3_na()
        tape = Tape()
        params = PoolParams.on_tape(
            tape,
            ScoreParams(theta_s=np.array([[1.0], [-1.0]])),
            [LiftParams(theta_p=np.ones((1, 2)), theta_u=np.ones((1, 2)))],
        )
        # scores on raw features select node 0; lift then runs on those features
        out = liftpool(
            g, na, constant(g.features), ONE_GRAPH,
            PoolConfig(ratio=1 / 3, num_lift_layers=1, gate_with_scores=False), params,
        )
        assert out.preserved == [0] and out.removed == [1, 2]
        np.testing.assert_allclose(out.scores, [math.tanh(0.5), -math.tanh(0.5), -math.tanh(0.5)], atol=1e-15)
        assert out.coarse_graph.num_nodes == 1
        assert out.membership_out.tolist() == [0]
        # prediction/update on the raw features, hand-checked
        m = na.matrix[np.ix_([1, 2], [0])]
        pred = np.maximum(m @ g.features[[0]], 0.0)
        hr = g.features[[1, 2]] - pred
        upd = np.maximum(m.T @ hr, 0.0)
        np.testing.assert_allclose(out.lifted_preserved.values, g.features[[0]] + upd, atol=1e-15)

    def test_counts_match_ratio(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            g = random_graph(rng)
            na = normalize_augment(g)
            tape = Tape()
            d = g.feature_dim
            params = PoolParams(theta_s=tape.leaf(rng.uniform(-1, 1, (d, 1))), lifts=[])
            ratio = float(rng.uniform(0.2, 1.0))
            out = liftpool(g, na, constant(g.features), np.zeros(g.num_nodes, dtype=np.intp),
                           PoolConfig(ratio=ratio, num_lift_layers=0), params)
            assert len(out.preserved) == topk_count(ratio, g.num_nodes)
            assert sorted(out.preserved + out.removed) == list(range(g.num_nodes))
            assert out.coarse_graph.num_nodes == len(out.preserved)

    def test_missing_lift_params_rejected(self):
        g, na = path3_na()
        tape = Tape()
        params = PoolParams(theta_s=tape.leaf([[1.0], [-1.0]]), lifts=[])
        with pytest.raises(ValueError, match="lifting layers"):
            liftpool(g, na, constant(g.features), ONE_GRAPH,
                     PoolConfig(ratio=0.5, num_lift_layers=1), params)

    def test_batched_pooling_blocks_stay_contiguous(self):
        rng = np.random.default_rng(12)
        from liftgraph.graphs import batch_block_diagonal

        graphs = [random_graph(rng, n_lo=5, n_hi=8) for _ in range(3)]
        bg, mem = batch_block_diagonal(graphs)
        tape = Tape()
        d = bg.feature_dim
        params = PoolParams(
            theta_s=tape.leaf(rng.uniform(-1, 1, (d, 1))),
            lifts=[(tape.leaf(rng.uniform(-1, 1, (1, d))), tape.leaf(rng.uniform(-1, 1, (1, d))))],
        )
        na = normalize_augment(bg)
        out = liftpool(bg, na, constant(bg.features), mem, PoolConfig(ratio=0.5), params)
        # membership of pooled nodes is sorted per-graph blocks
        assert out.membership_out.tolist() == sorted(out.membership_out.tolist())
        counts = np.bincount(out.membership_out)
        for gi, g in enumerate(graphs):
            assert counts[gi] == topk_count(0.5, g.num_nodes)


class TestProperties:
    def test_baseline_equivalence(self):
        ok, detail = check_baseline_equivalence(n_graphs=30)
        assert ok, detail

    def test_zero_lift_identity(self):
        ok, detail = check_zero_lift_identity(n_graphs=20)
        assert ok, detail

    def test_locality(self):
        ok, detail = check_locality(n_graphs=10)
        assert ok, detail

    def test_locality_radius_grows_with_stacked_layers(self):
        # with L lifting layers, influence reaches at most 2L hops
        rng = np.random.default_rng(15)
        from liftgraph.graphs import bfs_distances

        for _ in range(5):
            g = random_graph(rng, n_lo=10, n_hi=16, edge_p=0.15)
            d = g.feature_dim
            na = normalize_augment(g)
            layers = 2
            tape = Tape()
            lifts = [
                (tape.leaf(rng.uniform(-1, 1, (1, d))), tape.leaf(rng.uniform(-1, 1, (1, d))))
                for _ in range(layers)
            ]
            scores = rng.uniform(-1, 1, g.num_nodes)
            preserved, removed = select_topk(scores, np.zeros(g.num_nodes, dtype=np.intp), 0.5)
            hp0, _ = lift(na, constant(g.features), preserved, removed, lifts)
            dist = {u: bfs_distances(g, u) for u in range(g.num_nodes)}
            for j in range(g.num_nodes):
                feats = g.features.copy()
                feats[j] += 1.0
                hp1, _ = lift(na, constant(feats), preserved, removed, lifts)
                for a, i in enumerate(preserved):
                    dij = dist[i][j]
                    if i != j and (dij > 2 * layers or dij < 0):
                        assert np.array_equal(hp0.values[a], hp1.values[a])

    def test_score_range(self):
        ok, detail = check_score_range(n_graphs=15)
        assert ok, detail

    def test_work_bound_counter(self):
        ok, detail = check_lift_work_bound(n_graphs=15)
        assert ok, detail

    def test_counter_counts_cut_edges_only(self):
        # star graph: center preserved, leaves removed -> cut = all edges
        n = 6
        g = Graph.build(n, [(0, i, 1.0) for i in range(1, n)], np.ones((n, 2)))
        na = normalize_augment(g)
        tape = Tape()
        counter = OpCounter()
        lift(na, constant(g.features), [0], list(range(1, n)),
             [(tape.leaf(np.ones((1, 2))), tape.leaf(np.ones((1, 2))))], counter)
        assert counter.cut_edges == n - 1
        assert counter.macs == 2 * (n - 1) * 2

    def test_selection_permutation_property(self):
        # preserved sets map through the permutation when scores are distinct
        rng = np.random.default_rng(13)
        from liftgraph.graphs import permute_graph

        for _ in range(20):
            g = random_graph(rng)
            d = g.feature_dim
            theta_s = rng.uniform(-1, 1, (d, 1))
            na = normalize_augment(g)
            s = compute_scores(na, constant(g.features), constant(theta_s)).values[:, 0]
            if np.min(np.diff(np.sort(s))) < 1e-6:
                continue
            mem = np.zeros(g.num_nodes, dtype=np.intp)
            preserved, _ = select_topk(s, mem, 0.5)
            perm = rng.permutation(g.num_nodes)
            gp = permute_graph(g, perm)
            nap = normalize_augment(gp)
            sp = compute_scores(nap, constant(gp.features), constant(theta_s)).values[:, 0]
            preserved_p, _ = select_topk(sp, mem, 0.5)
            assert [int(perm[i]) for i in preserved] == preserved_p


class TestClassicalLift1D:
    def test_constant_signal_fully_predicted(self):
        approx, detail = classical_lift_1d([1.0, 1.0, 1.0, 1.0], 1.0, 0.5)
        assert detail == [0, 0]
        assert approx == [1, 1]

    def test_zero_coefficients_identity_split(self):
        approx, detail = classical_lift_1d([1.0, 2.0, 3.0, 4.0], 0.0, 0.0)
        assert approx == [1, 3]
        assert detail == [2, 4]

    def test_odd_length_rejected(self):
        with pytest.raises(ValueError, match="even"):
            classical_lift_1d([1.0, 2.0, 3.0], 0.5, 0.5)

    def test_mismatched_halves_rejected(self):
        with pytest.raises(ValueError):
            classical_lift_1d_inverse([1.0], [1.0, 2.0], 0.5, 0.5)

    def test_random_roundtrip_exact(self):
        rng = np.random.default_rng(14)
        for _ in range(50):
            x = rng.uniform(-5, 5, 8).tolist()
            p, u = float(rng.uniform(-2, 2)), float(rng.uniform(-2, 2))
            approx, detail = classical_lift_1d(x, p, u)
            assert classical_lift_1d_inverse(approx, detail, p, u) == x

    @settings(deadline=None, max_examples=50)
    @given(
        half=st.integers(1, 12),
        seed=st.integers(0, 10_000),
        p=st.floats(-4, 4, allow_nan=False),
        u=st.floats(-4, 4, allow_nan=False),
    )
    def test_roundtrip_property(self, half, seed, p, u):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-100, 100, 2 * half).tolist()
        approx, detail = classical_lift_1d(x, p, u)
        back = classical_lift_1d_inverse(approx, detail, p, u)
        assert all(b == Fraction(v) for b, v in zip(back, x))
