import os

import numpy as np
import pytest

from liftgraph.data import (
    DataFormatError,
    Dataset,
    load_tu,
    make_folds,
    synth_cycles_vs_paths,
)

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


def write_tu(tmp_path, name, files):
    d = tmp_path / name
    d.mkdir()
    for suffix, content in files.items():
        (d / f"{name}_{suffix}.txt").write_text(content)
    return d


class TestLoadTU:
    def test_two_triangle_fixture(self):
        ds = load_tu(os.path.join(FIXTURES, "tiny_tu"), "TINY")
        assert len(ds.graphs) == 2
        assert all(g.num_nodes == 3 for g in ds.graphs)
        tri = np.ones((3, 3)) - np.eye(3)
        for g in ds.graphs:
            assert np.array_equal(g.adjacency(), tri)
        # labels {1, -1} remapped to {0, 1}: -1 -> 0, 1 -> 1
        assert [g.label for g in ds.graphs] == [1, 0]
        assert ds.num_classes == 2
        # node labels {0, 1, 2} one-hot
        assert ds.feature_kind == "node_labels_onehot"
        assert ds.feature_dim == 3
        assert ds.graphs[0].features.tolist() == [[1, 0, 0], [0, 1, 0], [1, 0, 0]]

    def test_missing_mandatory_file(self, tmp_path):
        d = write_tu(tmp_path, "X", {"A": "1, 2\n", "graph_indicator": "1\n1\n"})
        with pytest.raises(DataFormatError, match="graph_labels"):
            load_tu(d, "X")

    def test_edge_crossing_graphs_names_line(self, tmp_path):
        d = write_tu(
            tmp_path,
            "X",
            {
                "A": "1, 2\n2, 3\n",
                "graph_indicator": "1\n1\n2\n",
                "graph_labels": "1\n2\n",
            },
        )
        with pytest.raises(DataFormatError, match=r"A\.txt:2"):
            load_tu(d, "X")

    def test_non_integer_names_line(self, tmp_path):
        d = write_tu(
            tmp_path,
            "X",
            {
                "A": "1, 2\n1, x\n",
                "graph_indicator": "1\n1\n",
                "graph_labels": "1\n",
            },
        )
        with pytest.raises(DataFormatError, match=r"A\.txt:2.*integer"):
            load_tu(d, "X")

    def test_node_id_out_of_range(self, tmp_path):
        d = write_tu(
            tmp_path,
            "X",
            {
                "A": "1, 9\n",
                "graph_indicator": "1\n1\n",
                "graph_labels": "1\n",
            },
        )
        with pytest.raises(DataFormatError, match=r"A\.txt:1"):
            load_tu(d, "X")

    def test_degree_onehot_fallback(self, tmp_path):
        d = write_tu(
            tmp_path,
            "X",
            {
                "A": "1, 2\n2, 1\n2, 3\n3, 2\n4, 5\n5, 4\n",
                "graph_indicator": "1\n1\n1\n2\n2\n",
                "graph_labels": "2\n5\n",
            },
        )
        ds = load_tu(d, "X", degree_cap=4)
        assert ds.feature_kind == "degree_onehot"
        assert ds.feature_dim == 5
        # path 0-1-2: degrees 1,2,1
        assert ds.graphs[0].features[:, 1].tolist() == [1.0, 0.0, 1.0]
        assert ds.graphs[0].features[:, 2].tolist() == [0.0, 1.0, 0.0]
        assert [g.label for g in ds.graphs] == [0, 1]

    def test_degree_overflow_bucket(self, tmp_path):
        star = "".join(f"1, {i}\n{i}, 1\n" for i in range(2, 7))
        d = write_tu(
            tmp_path,
            "X",
            {
                "A": star,
                "graph_indicator": "1\n" * 6,
                "graph_labels": "1\n",
            },
        )
        ds = load_tu(d, "X", degree_cap=3)
        # hub degree 5 lands in the overflow bucket (index 3)
        assert ds.graphs[0].features[0].tolist() == [0.0, 0.0, 0.0, 1.0]

    def test_node_attributes_preferred(self, tmp_path):
        d = write_tu(
            tmp_path,
            "X",
            {
                "A": "1, 2\n",
                "graph_indicator": "1\n1\n",
                "graph_labels": "1\n",
                "node_labels": "0\n1\n",
                "node_attributes": "0.5, 1.5\n-1.0, 2.0\n",
            },
        )
        ds = load_tu(d, "X")
        assert ds.feature_kind == "node_attributes"
        assert ds.graphs[0].features.tolist() == [[0.5, 1.5], [-1.0, 2.0]]

    def test_duplicate_edges_collapsed_and_self_loops_dropped(self, tmp_path):
        d = write_tu(
            tmp_path,
            "X",
            {
                "A": "1, 2\n2, 1\n1, 2\n1, 1\n",
                "graph_indicator": "1\n1\n",
                "graph_labels": "1\n",
            },
        )
        ds = load_tu(d, "X")
        assert ds.graphs[0].edges() == [(0, 1, 1.0)]

    def test_symmetry_and_partition_invariant(self):
        ds = load_tu(os.path.join(FIXTURES, "tiny_tu"), "TINY")
        seen = set()
        for g in ds.graphs:
            a = g.adjacency()
            assert np.array_equal(a, a.T)
            for nid in g.node_ids:
                assert nid not in seen
                seen.add(nid)
        assert seen == set(range(6))


class TestSynthetic:
    def test_fixed_size_construction(self):
        ds = synth_cycles_vs_paths(4, (5, 5), seed=0)
        assert len(ds.graphs) == 4
        assert [g.label for g in ds.graphs] == [0, 1, 0, 1]
        for g in ds.graphs:
            assert g.num_nodes == 5
            degs = np.zeros(5)
            for i, j, _ in g.edges():
                degs[i] += 1
                degs[j] += 1
            if g.label == 0:
                assert (degs == 2).all()  # cycle
            else:
                assert sorted(degs.tolist()) == [1, 1, 2, 2, 2]  # path

    def test_deterministic_in_seed(self):
        a = synth_cycles_vs_paths(20, (6, 12), seed=42)
        b = synth_cycles_vs_paths(20, (6, 12), seed=42)
        for ga, gb in zip(a.graphs, b.graphs):
            assert ga.edges() == gb.edges()
            assert np.array_equal(ga.features, gb.features)

    def test_mean_features_linearly_separate_classes(self):
        # paths put mass on the degree-1 bucket, cycles none: a threshold
        # on that single coordinate classifies perfectly
        ds = synth_cycles_vs_paths(40, (6, 12), seed=1)
        for g in ds.graphs:
            frac_deg1 = g.features[:, 1].mean()
            assert (frac_deg1 > 0) == (g.label == 1)

    def test_size_range_validated(self):
        with pytest.raises(ValueError):
            synth_cycles_vs_paths(4, (2, 5), seed=0)
        with pytest.raises(ValueError):
            synth_cycles_vs_paths(4, (8, 100), seed=0)


class TestMakeFolds:
    def test_balanced_two_class(self):
        ds = synth_cycles_vs_paths(100, (6, 8), seed=2)
        plan = make_folds(ds, 10, seed=3)
        labels = ds.labels()
        for fold in range(10):
            idx = plan.fold_indices(fold)
            assert len(idx) == 10
            assert (labels[idx] == 0).sum() == 5
            assert (labels[idx] == 1).sum() == 5

    def test_same_seed_reproduces(self):
        ds = synth_cycles_vs_paths(50, (6, 8), seed=4)
        a = make_folds(ds, 5, seed=7)
        b = make_folds(ds, 5, seed=7)
        assert np.array_equal(a.assignments, b.assignments)

    def test_imbalanced_counts_differ_by_at_most_one(self):
        rng = np.random.default_rng(5)
        base = synth_cycles_vs_paths(100, (6, 8), seed=6)
        # rebuild with a 37/63 imbalance by relabeling
        graphs = list(base.graphs)
        for i, g in enumerate(graphs):
            g.label = 0 if i < 37 else 1
        ds = Dataset(graphs, "imbalanced", 2, base.feature_dim, base.feature_kind, base.orig_ids)
        plan = make_folds(ds, 10, seed=8)
        labels = ds.labels()
        for cls, total in ((0, 37), (1, 63)):
            per_fold = [int((labels[plan.fold_indices(f)] == cls).sum()) for f in range(10)]
            assert sum(per_fold) == total
            assert max(per_fold) - min(per_fold) <= 1

    def test_partition(self):
        ds = synth_cycles_vs_paths(33, (6, 8), seed=9)
        plan = make_folds(ds, 3, seed=10)
        assert sorted(np.concatenate([plan.fold_indices(f) for f in range(3)]).tolist()) == list(range(33))

    def test_class_smaller_than_k_rejected(self):
        ds = synth_cycles_vs_paths(6, (6, 8), seed=11)
        with pytest.raises(ValueError, match="fewer than"):
            make_folds(ds, 4, seed=12)

    def test_order_invariant_given_orig_ids(self):
        ds = synth_cycles_vs_paths(30, (6, 8), seed=13)
        plan = make_folds(ds, 3, seed=14)
        perm = np.random.default_rng(15).permutation(30)
        shuffled = Dataset(
            [ds.graphs[i] for i in perm],
            ds.name,
            ds.num_classes,
            ds.feature_dim,
            ds.feature_kind,
            [ds.orig_ids[i] for i in perm],
        )
        plan_shuffled = make_folds(shuffled, 3, seed=14)
        for new_pos, old_pos in enumerate(perm):
            assert plan_shuffled.assignments[new_pos] == plan.assignments[old_pos]
