"""Benchmark ingestion (TU text format), synthetic data, fold splitting."""

from __future__ import annotations

import dataclasses
import os

import numpy as np

from .graphs import Graph

FEATURE_KINDS = ("node_attributes", "node_labels_onehot", "degree_onehot")


class DataFormatError(ValueError):
    """Parse error carrying the offending file and line number."""

    def __init__(self, path, line_no: int | None, msg: str):
        where = f"{path}:{line_no}" if line_no is not None else str(path)
        super().__init__(f"{where}: {msg}")
        self.path = str(path)
        self.line_no = line_no


@dataclasses.dataclass
class Dataset:
    graphs: list[Graph]
    name: str
    num_classes: int
    feature_dim: int
    feature_kind: str
    orig_ids: list[int]  # stable per-graph identity, survives reordering

    def __len__(self) -> int:
        return len(self.graphs)

    def labels(self) -> np.ndarray:
        return np.array([g.label for g in self.graphs], dtype=np.intp)


@dataclasses.dataclass
class FoldPlan:
    k: int
    seed: int
    assignments: np.ndarray  # graph index -> fold

    def fold_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)


def _read_lines(path) -> list[str]:
    try:
        with open(path) as f:
            return f.read().splitlines()
    except OSError as e:
        raise DataFormatError(path, None, f"cannot read file ({e.strerror})") from e


def _parse_int(tok: str, path, line_no: int) -> int:
    try:
        return int(tok.strip())
    except ValueError:
        raise DataFormatError(path, line_no, f"expected an integer, got {tok.strip()!r}") from None


def load_tu(dir_path, name: str, degree_cap: int = 64, feature_kind: str | None = None) -> Dataset:
    """Load a TU-format dataset directory.

    Expects NAME_A.txt (1-based edge pairs), NAME_graph_indicator.txt and
    NAME_graph_labels.txt; NAME_node_attributes.txt and NAME_node_labels.txt
    are optional. Features fall back in the order node attributes > node
    labels one-hot > degree one-hot (capped at ``degree_cap`` with an
    overflow bucket). Graph labels are remapped to a contiguous 0-based
    range; duplicate edges are collapsed and self-loops dropped.
    """
    paths = {
        key: os.path.join(dir_path, f"{name}_{suffix}.txt")
        for key, suffix in [
            ("edges", "A"),
            ("indicator", "graph_indicator"),
            ("labels", "graph_labels"),
            ("node_labels", "node_labels"),
            ("node_attrs", "node_attributes"),
        ]
    }
    for key in ("edges", "indicator", "labels"):
        if not os.path.isfile(paths[key]):
            raise DataFormatError(paths[key], None, "mandatory file is missing")

    ind_lines = _read_lines(paths["indicator"])
    node_graph = np.array(
        [_parse_int(t, paths["indicator"], i + 1) - 1 for i, t in enumerate(ind_lines) if t.strip()],
        dtype=np.intp,
    )
    num_nodes = node_graph.size
    num_graphs = int(node_graph.max()) + 1 if num_nodes else 0
    if num_graphs == 0:
        raise DataFormatError(paths["indicator"], None, "no nodes declared")
    if sorted(set(node_graph.tolist())) != list(range(num_graphs)):
        raise DataFormatError(paths["indicator"], None, "graph ids are not contiguous from 1")

    # local (within-graph) node numbering
    first_node = np.zeros(num_graphs, dtype=np.intp)
    sizes = np.bincount(node_graph, minlength=num_graphs)
    first_node[1:] = np.cumsum(sizes)[:-1]
    if not np.array_equal(node_graph, np.sort(node_graph)):
        raise DataFormatError(paths["indicator"], None, "nodes of one graph must be consecutive")

    edges_per_graph: list[set[tuple[int, int]]] = [set() for _ in range(num_graphs)]
    for line_no, line in enumerate(_read_lines(paths["edges"]), start=1):
        if not line.strip():
            continue
        toks = line.split(",")
        if len(toks) != 2:
            raise DataFormatError(paths["edges"], line_no, f"expected 'i, j', got {line.strip()!r}")
        u = _parse_int(toks[0], paths["edges"], line_no) - 1
        v = _parse_int(toks[1], paths["edges"], line_no) - 1
        if not (0 <= u < num_nodes and 0 <= v < num_nodes):
            raise DataFormatError(paths["edges"], line_no, f"node id out of range: {u + 1} or {v + 1}")
        gu, gv = node_graph[u], node_graph[v]
        if gu != gv:
            raise DataFormatError(
                paths["edges"], line_no,
                f"edge connects node {u + 1} (graph {gu + 1}) to node {v + 1} (graph {gv + 1})",
            )
        if u == v:
            continue  # stray self-loops in some distributions; loops enter only via augmentation
        lu, lv = int(u - first_node[gu]), int(v - first_node[gu])
        edges_per_graph[gu].add((min(lu, lv), max(lu, lv)))

    label_lines = [t for t in _read_lines(paths["labels"]) if t.strip()]
    if len(label_lines) != num_graphs:
        raise DataFormatError(paths["labels"], None, f"{len(label_lines)} labels for {num_graphs} graphs")
    raw_labels = [_parse_int(t, paths["labels"], i + 1) for i, t in enumerate(label_lines)]
    classes = sorted(set(raw_labels))
    remap = {c: i for i, c in enumerate(classes)}
    labels = [remap[c] for c in raw_labels]

    # feature source: attributes > node labels one-hot > degree one-hot
    if feature_kind is None:
        if os.path.isfile(paths["node_attrs"]):
            feature_kind = "node_attributes"
        elif os.path.isfile(paths["node_labels"]):
            feature_kind = "node_labels_onehot"
        else:
            feature_kind = "degree_onehot"
    if feature_kind not in FEATURE_KINDS:
        raise ValueError(f"unknown feature kind {feature_kind!r}")

    if feature_kind == "node_attributes":
        lines = _read_lines(paths["node_attrs"])
        rows = []
        for line_no, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                rows.append([float(t) for t in line.split(",")])
            except ValueError:
                raise DataFormatError(paths["node_attrs"], line_no, f"bad attribute row {line.strip()!r}") from None
        feats = np.asarray(rows)
        if feats.shape[0] != num_nodes:
            raise DataFormatError(paths["node_attrs"], None, f"{feats.shape[0]} rows for {num_nodes} nodes")
    elif feature_kind == "node_labels_onehot":
        lines = [t for t in _read_lines(paths["node_labels"]) if t.strip()]
        if len(lines) != num_nodes:
            raise DataFormatError(paths["node_labels"], None, f"{len(lines)} rows for {num_nodes} nodes")
        raw = [_parse_int(t, paths["node_labels"], i + 1) for i, t in enumerate(lines)]
        vocab = {c: i for i, c in enumerate(sorted(set(raw)))}
        feats = np.zeros((num_nodes, len(vocab)))
        feats[np.arange(num_nodes), [vocab[c] for c in raw]] = 1.0
    else:
        feats = None  # filled per graph from degrees below

    graphs: list[Graph] = []
    for gi in range(num_graphs):
        n = int(sizes[gi])
        lo = int(first_node[gi])
        edges = [(i, j, 1.0) for i, j in sorted(edges_per_graph[gi])]
        if feature_kind == "degree_onehot":
            deg = np.zeros(n, dtype=np.intp)
            for i, j, _ in edges:
                deg[i] += 1
                deg[j] += 1
            gf = np.zeros((n, degree_cap + 1))
            gf[np.arange(n), np.minimum(deg, degree_cap)] = 1.0
        else:
            gf = feats[lo : lo + n]
        graphs.append(Graph.build(n, edges, gf, label=labels[gi], node_ids=list(range(lo, lo + n))))

    return Dataset(
        graphs=graphs,
        name=name,
        num_classes=len(classes),
        feature_dim=graphs[0].feature_dim,
        feature_kind=feature_kind,
        orig_ids=list(range(num_graphs)),
    )


def synth_cycles_vs_paths(n_graphs: int, size_range: tuple[int, int], seed: int) -> Dataset:
    """Balanced synthetic set: class 0 = cycles C_n, class 1 = paths P_n.

    Sizes are drawn uniformly from ``size_range`` (inclusive, within
    [4, 64]); features are a 3-way degree one-hot. Deterministic in seed.
    """
    lo, hi = size_range
    if not (4 <= lo <= hi <= 64):
        raise ValueError(f"size_range must satisfy 4 <= lo <= hi <= 64, got {size_range}")
    rng = np.random.default_rng(seed)
    graphs: list[Graph] = []
    for gi in range(n_graphs):
        n = int(rng.integers(lo, hi + 1))
        label = gi % 2
        edges = [(i, i + 1, 1.0) for i in range(n - 1)]
        if label == 0:
            edges.append((0, n - 1, 1.0))
        deg = np.full(n, 2)
        if label == 1:
            deg[0] = deg[n - 1] = 1
        feats = np.zeros((n, 3))
        feats[np.arange(n), np.minimum(deg, 2)] = 1.0
        graphs.append(Graph.build(n, edges, feats, label=label))
    return Dataset(
        graphs=graphs,
        name="cycles-vs-paths",
        num_classes=2,
        feature_dim=3,
        feature_kind="degree_onehot",
        orig_ids=list(range(n_graphs)),
    )


def make_folds(ds: Dataset, k: int, seed: int) -> FoldPlan:
    """Stratified k-fold assignment, deterministic in (labels, seed).

    Members of each class are taken in canonical order (sorted by the
    dataset's stable per-graph ids), shuffled with a per-class seeded
    generator, and dealt round-robin, so per-class fold counts differ by at
    most one and reordering the dataset does not change which graph lands
    in which fold.
    """
    if k < 2:
        raise ValueError(f"fold count must be >= 2, got {k}")
    labels = ds.labels()
    assignments = np.full(len(ds.graphs), -1, dtype=np.intp)
    for cls in range(ds.num_classes):
        members = np.flatnonzero(labels == cls)
        if members.size < k:
            raise ValueError(f"class {cls} has {members.size} graphs, fewer than {k} folds")
        members = sorted(members.tolist(), key=lambda i: ds.orig_ids[i])
        rng = np.random.default_rng([seed, cls])
        order = rng.permutation(len(members))
        for slot, midx in enumerate(order):
            assignments[members[midx]] = slot % k
    return FoldPlan(k=k, seed=seed, assignments=assignments)
