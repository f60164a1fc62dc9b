"""Graph representation, adjacency normalization, k-hop expansion, batching.

Graphs are undirected with non-negative finite edge weights, stored as a
canonical edge list (i < j, lexicographically sorted). They are immutable by
convention after construction; all operations return new graphs. Dense
adjacency materialization is used throughout (fine for benchmark-scale graphs
of up to a few thousand nodes).
"""

from __future__ import annotations

import dataclasses
from collections import deque

import numpy as np

NORM_MODES = ("paper_literal", "symmetric_sqrt")


@dataclasses.dataclass(eq=False)
class Graph:
    """Undirected weighted graph with node features and an optional label."""

    num_nodes: int
    edge_i: np.ndarray  # int, canonical endpoint i < j
    edge_j: np.ndarray
    edge_w: np.ndarray  # float64, >= 0
    features: np.ndarray  # (num_nodes, d) float64
    label: int | None = None
    node_ids: list | None = None  # provenance of each node, if any

    @classmethod
    def build(cls, num_nodes, edges, features, label=None, node_ids=None) -> "Graph":
        """Construct from an iterable of (i, j, weight) or (i, j) tuples.

        Canonicalizes endpoint order, sorts, and collapses duplicates
        (duplicates must agree on weight). Self-loops are rejected: loops
        enter only through adjacency augmentation.
        """
        feats = np.asarray(features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != num_nodes:
            raise ValueError(f"features must be {num_nodes} x d, got shape {feats.shape}")
        seen: dict[tuple[int, int], float] = {}
        for e in edges:
            i, j = int(e[0]), int(e[1])
            w = float(e[2]) if len(e) > 2 else 1.0
            if i == j:
                raise ValueError(f"self-loop on node {i} not allowed in raw storage")
            if not (0 <= i < num_nodes and 0 <= j < num_nodes):
                raise ValueError(f"edge ({i}, {j}) out of range for {num_nodes} nodes")
            if not (np.isfinite(w) and w >= 0):
                raise ValueError(f"edge ({i}, {j}) has invalid weight {w}")
            key = (min(i, j), max(i, j))
            if key in seen and seen[key] != w:
                raise ValueError(f"duplicate edge {key} with conflicting weights")
            seen[key] = w
        order = sorted(seen)
        ei = np.array([p[0] for p in order], dtype=np.intp)
        ej = np.array([p[1] for p in order], dtype=np.intp)
        ew = np.array([seen[p] for p in order], dtype=np.float64)
        return cls(num_nodes, ei, ej, ew, feats, label, node_ids)

    @property
    def num_edges(self) -> int:
        return len(self.edge_w)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def edges(self) -> list[tuple[int, int, float]]:
        return [
            (int(i), int(j), float(w))
            for i, j, w in zip(self.edge_i, self.edge_j, self.edge_w)
        ]

    def adjacency(self) -> np.ndarray:
        """Dense symmetric adjacency matrix."""
        a = np.zeros((self.num_nodes, self.num_nodes))
        a[self.edge_i, self.edge_j] = self.edge_w
        a[self.edge_j, self.edge_i] = self.edge_w
        return a

    def neighbor_lists(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in range(self.num_nodes)]
        for i, j in zip(self.edge_i, self.edge_j):
            adj[i].append(int(j))
            adj[j].append(int(i))
        return adj


@dataclasses.dataclass(eq=False)
class NormalizedAdjacency:
    """Normalized adjacency with self-loop weight ``lam`` on the diagonal."""

    matrix: np.ndarray
    mode: str
    lam: float

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


def degree(g: Graph) -> np.ndarray:
    """Weighted degree per node; isolated nodes get 0."""
    deg = np.zeros(g.num_nodes)
    np.add.at(deg, g.edge_i, g.edge_w)
    np.add.at(deg, g.edge_j, g.edge_w)
    return deg


def normalize_augment(g: Graph, mode: str = "symmetric_sqrt", lam: float = 1.0) -> NormalizedAdjacency:
    """Degree-normalize the adjacency and add ``lam`` self-loops.

    ``paper_literal`` divides each off-diagonal entry by d_i * d_j;
    ``symmetric_sqrt`` by sqrt(d_i * d_j). Degree-zero denominators are
    guarded to 0 so isolated nodes keep only the self-loop entry. Output is
    exactly symmetric (each entry written once to both slots).
    """
    if lam < 0:
        raise ValueError(f"self-loop weight must be >= 0, got {lam}")
    if mode not in NORM_MODES:
        raise ValueError(f"unknown normalization mode {mode!r}, expected one of {NORM_MODES}")
    deg = degree(g)
    den = deg[g.edge_i] * deg[g.edge_j]
    if mode == "symmetric_sqrt":
        den = np.sqrt(den)
    vals = np.divide(g.edge_w, den, out=np.zeros_like(g.edge_w), where=den > 0)
    m = np.zeros((g.num_nodes, g.num_nodes))
    m[g.edge_i, g.edge_j] = vals
    m[g.edge_j, g.edge_i] = vals
    np.fill_diagonal(m, lam)
    return NormalizedAdjacency(m, mode, float(lam))


def bfs_distances(g: Graph, source: int) -> np.ndarray:
    """Unweighted shortest-path hop counts from ``source``; -1 if unreachable."""
    dist = np.full(g.num_nodes, -1, dtype=np.intp)
    dist[source] = 0
    adj = g.neighbor_lists()
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def khop_augment(g: Graph, k: int) -> Graph:
    """Connect every node pair within shortest-path distance ``k``.

    Added edges get unit weight; original weights are preserved. ``k=1``
    returns the input graph unchanged.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k == 1:
        return g
    existing = {(int(i), int(j)): float(w) for i, j, w in zip(g.edge_i, g.edge_j, g.edge_w)}
    pairs = dict(existing)
    for u in range(g.num_nodes):
        dist = bfs_distances(g, u)
        for v in range(u + 1, g.num_nodes):
            if 0 < dist[v] <= k and (u, v) not in pairs:
                pairs[(u, v)] = 1.0
    edges = [(i, j, w) for (i, j), w in pairs.items()]
    return Graph.build(g.num_nodes, edges, g.features, g.label, g.node_ids)


def cross_submatrix(na: NormalizedAdjacency, rows, cols) -> np.ndarray:
    """Submatrix na[rows][:, cols] for disjoint index lists.

    Disjointness means the lam self-loop diagonal never appears in the
    result, so cut submatrices carry pure cross-set connectivity.
    """
    r = _unique_in_range(rows, na.size, "rows")
    c = _unique_in_range(cols, na.size, "cols")
    if np.intersect1d(r, c).size:
        raise ValueError("rows and cols must be disjoint")
    return na.matrix[np.ix_(r, c)]


def _unique_in_range(idx, n: int, what: str) -> np.ndarray:
    arr = np.asarray(idx, dtype=np.intp)
    if arr.ndim != 1:
        raise ValueError(f"{what}: expected a 1-D index list")
    if arr.size and (arr.min() < 0 or arr.max() >= n):
        raise ValueError(f"{what}: index out of range for size {n}: {arr.tolist()}")
    if len(np.unique(arr)) != arr.size:
        raise ValueError(f"{what}: duplicate indices: {arr.tolist()}")
    return arr


def batch_block_diagonal(graphs: list[Graph]) -> tuple[Graph, np.ndarray]:
    """Disjoint union of graphs plus a node -> source-graph membership map."""
    if not graphs:
        raise ValueError("cannot batch an empty list of graphs")
    d = graphs[0].feature_dim
    for g in graphs:
        if g.feature_dim != d:
            raise ValueError(f"feature dimensions differ: {g.feature_dim} vs {d}")
    ei, ej, ew, membership = [], [], [], []
    offset = 0
    for gi, g in enumerate(graphs):
        ei.append(g.edge_i + offset)
        ej.append(g.edge_j + offset)
        ew.append(g.edge_w)
        membership.append(np.full(g.num_nodes, gi, dtype=np.intp))
        offset += g.num_nodes
    batched = Graph(
        num_nodes=offset,
        edge_i=np.concatenate(ei) if ei else np.zeros(0, dtype=np.intp),
        edge_j=np.concatenate(ej) if ej else np.zeros(0, dtype=np.intp),
        edge_w=np.concatenate(ew) if ew else np.zeros(0),
        features=np.vstack([g.features for g in graphs]),
        label=None,
        node_ids=None,
    )
    return batched, np.concatenate(membership)


def induced_subgraph(g: Graph, keep) -> Graph:
    """Subgraph on ``keep``, in the given order; new node a is old keep[a]."""
    sel = _unique_in_range(keep, g.num_nodes, "keep")
    pos = np.full(g.num_nodes, -1, dtype=np.intp)
    pos[sel] = np.arange(sel.size)
    mask = (pos[g.edge_i] >= 0) & (pos[g.edge_j] >= 0)
    edges = list(zip(pos[g.edge_i[mask]], pos[g.edge_j[mask]], g.edge_w[mask]))
    ids = [g.node_ids[i] for i in sel] if g.node_ids is not None else [int(i) for i in sel]
    return Graph.build(sel.size, edges, g.features[sel], g.label, ids)


def permute_graph(g: Graph, perm) -> Graph:
    """Relabel nodes so new index perm[i] is old node i (verification helper)."""
    p = _unique_in_range(perm, g.num_nodes, "perm")
    if p.size != g.num_nodes:
        raise ValueError(f"perm must cover all {g.num_nodes} nodes")
    feats = np.empty_like(g.features)
    feats[p] = g.features
    edges = [(int(p[i]), int(p[j]), float(w)) for i, j, w in zip(g.edge_i, g.edge_j, g.edge_w)]
    ids = None
    if g.node_ids is not None:
        ids = [None] * g.num_nodes
        for old, new in enumerate(p):
            ids[new] = g.node_ids[old]
    return Graph.build(g.num_nodes, edges, feats, g.label, ids)
