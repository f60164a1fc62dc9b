"""Executable property checks behind the ``selftest`` CLI subcommand.

The pytest suite runs the same checks at larger sample counts. The baseline
reference here is a deliberately straight-line reimplementation of
select-gate-coarsen pooling sharing no code with the production path, so it
can serve as an independent oracle.
"""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Tape, constant, softmax_cross_entropy
from .graphs import Graph, bfs_distances, khop_augment, normalize_augment, permute_graph
from .model import ModelConfig, count_params, forward, init_params
from .pooling import (
    OpCounter,
    PoolConfig,
    PoolParams,
    classical_lift_1d,
    classical_lift_1d_inverse,
    compute_scores,
    lift,
    liftpool,
    select_topk,
)


def random_graph(rng: np.random.Generator, n_lo=6, n_hi=20, d=4, edge_p=0.35) -> Graph:
    n = int(rng.integers(n_lo, n_hi + 1))
    edges = [
        (i, j, 1.0) for i in range(n) for j in range(i + 1, n) if rng.random() < edge_p
    ]
    # keep connectivity plausible: chain any isolated prefix
    present = {v for e in edges for v in e[:2]}
    for i in range(n - 1):
        if i not in present or i + 1 not in present:
            edges.append((i, i + 1, 1.0))
            present.update((i, i + 1))
    feats = rng.uniform(-1.0, 1.0, size=(n, d))
    return Graph.build(n, set(edges), feats)


def sagpool_reference(g: Graph, theta_s: np.ndarray, ratio: float, mode: str, lam: float):
    """Straight-line two-stage pooling: scores, top-k, gate, restrict.

    Independent of the production modules on purpose: dense adjacency and
    normalization are rebuilt from the raw edge list here.
    """
    n = g.num_nodes
    a = np.zeros((n, n))
    for i, j, w in zip(g.edge_i, g.edge_j, g.edge_w):
        a[i, j] = w
        a[j, i] = w
    deg = a.sum(axis=1)
    wa = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i == j or a[i, j] == 0:
                continue
            den = deg[i] * deg[j]
            if mode == "symmetric_sqrt":
                den = math.sqrt(den)
            wa[i, j] = a[i, j] / den if den > 0 else 0.0
    for i in range(n):
        wa[i, i] = lam
    s = np.tanh(wa @ g.features @ theta_s)[:, 0]
    k = max(1, math.ceil(round(ratio * n, 9)))
    order = sorted(range(n), key=lambda i: (-s[i], i))
    kept = order[:k]
    feats = g.features[kept] * s[kept][:, None]
    coarse_adj = a[np.ix_(kept, kept)]
    return kept, s, feats, coarse_adj


def _rand_model(rng, in_dim=4, hidden=8, blocks=3, lift_layers=1, ratio=0.5, gate=True):
    cfg = ModelConfig(
        in_dim=in_dim,
        num_classes=2,
        hidden_dim=hidden,
        num_blocks=blocks,
        pool=PoolConfig(ratio=ratio, num_lift_layers=lift_layers, gate_with_scores=gate),
        dropout_rate=0.0,
    )
    params = init_params(cfg, seed=int(rng.integers(0, 2**31)))
    # random lifting diagonals so the lift stage actually does something
    for name in params.values:
        if ".lift" in name:
            params.values[name] = rng.uniform(-1.0, 1.0, size=params.values[name].shape)
    return cfg, params


def _distinct(values: np.ndarray, margin: float = 1e-6) -> bool:
    v = np.sort(np.asarray(values).ravel())
    return v.size < 2 or float(np.min(np.diff(v))) > margin


def check_permutation_invariance(n_graphs: int = 10, seed: int = 7, tol: float = 1e-9) -> tuple[bool, str]:
    """Single-graph logits must match under node relabeling (distinct scores)."""
    rng = np.random.default_rng(seed)
    done = 0
    worst = 0.0
    while done < n_graphs:
        g = random_graph(rng)
        cfg, params = _rand_model(rng)
        mem = np.zeros(g.num_nodes, dtype=np.intp)
        res = forward(g, mem, params, cfg)
        if not all(_distinct(o.scores) for o in res.outcomes):
            continue
        perm = rng.permutation(g.num_nodes)
        res_p = forward(permute_graph(g, perm), mem, params, cfg)
        diff = float(np.abs(res.logits.values - res_p.logits.values).max())
        worst = max(worst, diff)
        if diff > tol:
            return False, f"logits moved by {diff:.3e} under permutation"
        done += 1
    return True, f"max logit deviation {worst:.3e} over {n_graphs} graphs"


def check_locality(n_graphs: int = 10, seed: int = 11) -> tuple[bool, str]:
    """One lifting layer is 2-hop local: perturbations beyond 2 hops leave a
    preserved node's lifted row bit-identical; beyond 1 hop for removed rows."""
    rng = np.random.default_rng(seed)
    for _ in range(n_graphs):
        g = random_graph(rng, edge_p=0.25)
        d = g.feature_dim
        na = normalize_augment(g)
        theta = (rng.uniform(-1, 1, (1, d)), rng.uniform(-1, 1, (1, d)))

        def run_lift(features: np.ndarray, preserved, removed):
            tape = Tape()
            h = tape.leaf(features)
            lifts = [(tape.leaf(theta[0]), tape.leaf(theta[1]))]
            return lift(na, h, preserved, removed, lifts)

        scores = np.tanh(na.matrix @ g.features @ rng.uniform(-1, 1, (d, 1)))[:, 0]
        preserved, removed = select_topk(scores, np.zeros(g.num_nodes, dtype=np.intp), 0.5)
        hp0, hr0 = run_lift(g.features, preserved, removed)
        dist = {u: bfs_distances(g, u) for u in range(g.num_nodes)}
        for j in range(g.num_nodes):
            feats = g.features.copy()
            feats[j] += rng.uniform(0.5, 1.5, size=d)
            hp1, hr1 = run_lift(feats, preserved, removed)
            for a, i in enumerate(preserved):
                dij = dist[i][j]
                if i != j and (dij > 2 or dij < 0):
                    if not np.array_equal(hp0.values[a], hp1.values[a]):
                        return False, f"preserved node {i} changed after perturbing node {j} at distance {dij}"
            for a, m in enumerate(removed):
                dmj = dist[m][j]
                if m != j and j in preserved and (dmj > 1 or dmj < 0):
                    if not np.array_equal(hr0.values[a], hr1.values[a]):
                        return False, f"removed node {m} changed after perturbing preserved {j} at distance {dmj}"
    return True, f"{n_graphs} graphs, all far rows bit-identical"


def check_parameter_overhead(d: int = 128, blocks: int = 3, lift_layers: int = 1) -> tuple[bool, str]:
    base = ModelConfig(in_dim=4, num_classes=2, hidden_dim=d, num_blocks=blocks,
                       pool=PoolConfig(num_lift_layers=0))
    lifted = ModelConfig(in_dim=4, num_classes=2, hidden_dim=d, num_blocks=blocks,
                         pool=PoolConfig(num_lift_layers=lift_layers))
    _, n0 = count_params(init_params(base, 0))
    _, n1 = count_params(init_params(lifted, 0))
    expect = 2 * d * lift_layers * blocks
    ok = n1 - n0 == expect
    return ok, f"overhead {n1 - n0}, expected {expect}"


def check_baseline_equivalence(n_graphs: int = 20, seed: int = 3) -> tuple[bool, str]:
    """num_lift_layers=0 must reproduce the straight-line reference exactly."""
    rng = np.random.default_rng(seed)
    for _ in range(n_graphs):
        g = random_graph(rng)
        d = g.feature_dim
        theta_s = rng.uniform(-1, 1, (d, 1))
        ratio = float(rng.choice([0.25, 0.5, 0.8]))
        mode = "symmetric_sqrt" if rng.random() < 0.5 else "paper_literal"
        kept_ref, s_ref, feats_ref, adj_ref = sagpool_reference(g, theta_s, ratio, mode, 1.0)

        tape = Tape()
        na = normalize_augment(g, mode, 1.0)
        out = liftpool(
            g, na, constant(g.features), np.zeros(g.num_nodes, dtype=np.intp),
            PoolConfig(ratio=ratio, num_lift_layers=0, gate_with_scores=True),
            PoolParams(theta_s=tape.leaf(theta_s), lifts=[]),
        )
        if out.preserved != kept_ref:
            return False, f"selection differs: {out.preserved} vs {kept_ref}"
        if not np.array_equal(out.scores, s_ref):
            return False, "scores differ from reference"
        if not np.array_equal(out.features_out.values, feats_ref):
            return False, "gated features differ from reference"
        if not np.array_equal(out.coarse_graph.adjacency(), adj_ref):
            return False, "coarse adjacency differs from reference"
    return True, f"{n_graphs} graphs entry-identical"


def check_zero_lift_identity(n_graphs: int = 10, seed: int = 5) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    for _ in range(n_graphs):
        g = random_graph(rng)
        d = g.feature_dim
        na = normalize_augment(g)
        mem = np.zeros(g.num_nodes, dtype=np.intp)
        theta_s = rng.uniform(-1, 1, (d, 1))
        zeros = np.zeros((1, d))

        tape = Tape()
        out0 = liftpool(g, na, constant(g.features), mem,
                        PoolConfig(ratio=0.5, num_lift_layers=0),
                        PoolParams(theta_s=tape.leaf(theta_s), lifts=[]))
        tape2 = Tape()
        out1 = liftpool(g, na, constant(g.features), mem,
                        PoolConfig(ratio=0.5, num_lift_layers=1),
                        PoolParams(theta_s=tape2.leaf(theta_s),
                                   lifts=[(tape2.leaf(zeros), tape2.leaf(zeros))]))
        if out0.preserved != out1.preserved:
            return False, "selection differs between baseline and zero-lift"
        if not np.array_equal(out0.features_out.values, out1.features_out.values):
            return False, "zero diagonals did not reproduce baseline features"
    return True, f"{n_graphs} graphs identical"


def check_khop_oracle(n_graphs: int = 25, seed: int = 13, max_nodes: int = 50) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    for _ in range(n_graphs):
        n = int(rng.integers(2, max_nodes + 1))
        edges = {(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 2.0 / n}
        g = Graph.build(n, [(i, j, 1.0) for i, j in edges], np.zeros((n, 1)))
        k = int(rng.integers(1, 4))
        gk = khop_augment(g, k)
        got = {(int(i), int(j)) for i, j in zip(gk.edge_i, gk.edge_j)}
        want = set()
        for u in range(n):
            dist = bfs_distances(g, u)
            for v in range(u + 1, n):
                if 0 < dist[v] <= k:
                    want.add((u, v))
        if got != want:
            return False, f"k={k}: edge sets differ by {got ^ want}"
    return True, f"{n_graphs} graphs match the BFS oracle"


def check_roundtrip_1d(n_signals: int = 200, seed: int = 17) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    for _ in range(n_signals):
        n = 2 * int(rng.integers(1, 17))
        x = rng.uniform(-10.0, 10.0, n).tolist()
        p, u = float(rng.uniform(-2, 2)), float(rng.uniform(-2, 2))
        approx, detail = classical_lift_1d(x, p, u)
        back = classical_lift_1d_inverse(approx, detail, p, u)
        if any(b != v for b, v in zip(back, x)):
            return False, "reconstruction is not exact"
    return True, f"{n_signals} signals reconstructed exactly"


def check_score_range(n_graphs: int = 10, seed: int = 23) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    for _ in range(n_graphs):
        g = random_graph(rng)
        na = normalize_augment(g)
        theta_s = rng.uniform(-1, 1, (g.feature_dim, 1))
        s = compute_scores(na, constant(g.features), constant(theta_s)).values
        if not ((s > -1.0).all() and (s < 1.0).all()):
            return False, "scores escaped (-1, 1)"
    return True, f"{n_graphs} graphs inside (-1, 1)"


def check_lift_work_bound(n_graphs: int = 10, seed: int = 29) -> tuple[bool, str]:
    """Lifting cost stays within 2 * layers * d * |E| multiply-accumulates."""
    rng = np.random.default_rng(seed)
    for _ in range(n_graphs):
        g = random_graph(rng)
        d = g.feature_dim
        layers = int(rng.integers(1, 4))
        na = normalize_augment(g)
        tape = Tape()
        lifts = [(tape.leaf(rng.uniform(-1, 1, (1, d))), tape.leaf(rng.uniform(-1, 1, (1, d))))
                 for _ in range(layers)]
        scores = rng.uniform(-1, 1, g.num_nodes)
        preserved, removed = select_topk(scores, np.zeros(g.num_nodes, dtype=np.intp), 0.5)
        counter = OpCounter()
        lift(na, tape.leaf(g.features), preserved, removed, lifts, counter)
        if counter.cut_edges > g.num_edges:
            return False, f"cut edges {counter.cut_edges} exceed |E|={g.num_edges}"
        if counter.macs > 2 * layers * d * g.num_edges:
            return False, f"{counter.macs} MACs exceed bound {2 * layers * d * g.num_edges}"
    return True, f"{n_graphs} graphs within the cut-edge work bound"


def check_gradients(seed: int = 31) -> tuple[bool, str]:
    """Full-model loss gradient vs central differences on a small graph."""
    from .autodiff import grad_check

    rng = np.random.default_rng(seed)
    g = random_graph(rng, n_lo=8, n_hi=8, d=3, edge_p=0.4)
    cfg, params = _rand_model(rng, in_dim=3, hidden=5, blocks=2)
    mem = np.zeros(g.num_nodes, dtype=np.intp)

    def build(leaves):
        res = forward(g, mem, None, cfg, leaves=leaves)
        return softmax_cross_entropy(res.logits, [1])

    report = grad_check(build, params.values, h=1e-6, tol=1e-5)
    if not report.ok:
        return False, f"{len(report.failures)} coordinates failed, worst {report.max_rel_error:.2e}"
    return True, (
        f"max rel err {report.max_rel_error:.2e} over {report.n_checked} coordinates "
        f"({len(report.kinked)} kink-excluded)"
    )


ALL_CHECKS = [
    ("1d-lifting-roundtrip", check_roundtrip_1d),
    ("khop-bfs-oracle", check_khop_oracle),
    ("permutation-invariance", check_permutation_invariance),
    ("lift-locality", check_locality),
    ("parameter-overhead", check_parameter_overhead),
    ("baseline-equivalence", check_baseline_equivalence),
    ("zero-lift-identity", check_zero_lift_identity),
    ("score-range", check_score_range),
    ("lift-work-bound", check_lift_work_bound),
    ("gradient-check", check_gradients),
]


def run_all(verbose: bool = True) -> int:
    """Run every property check; returns the number of failures."""
    failures = 0
    for name, fn in ALL_CHECKS:
        ok, detail = fn()
        if verbose:
            print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failures += 0 if ok else 1
    return failures
