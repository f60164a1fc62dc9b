"""Three-stage lifting pool: score-based node selection, graph lifting across
the preserved/removed cut, and coarsening to the preserved nodes.

With ``num_lift_layers=0`` the operator degenerates to the plain
select-gate-coarsen baseline (score gating on), so the baseline is a special
case rather than a separate code path. The lifting stage works on sparse
cross-submatrices of the normalized adjacency: its cost is proportional to
the number of edges crossing the cut, not to the product of the set sizes.
"""

from __future__ import annotations

import dataclasses
import json
import math
from fractions import Fraction

import numpy as np
import scipy.sparse as sp

from .autodiff import (
    DiffMatrix,
    add,
    col_scale,
    const_spmm,
    constant,
    matmul,
    relu,
    row_scale,
    row_select,
    sub,
    tanh_elem,
)
from .graphs import (
    Graph,
    NormalizedAdjacency,
    cross_submatrix,
    induced_subgraph,
    khop_augment,
    normalize_augment,
)


@dataclasses.dataclass
class PoolConfig:
    ratio: float = 0.5
    num_lift_layers: int = 1
    score_activation: str = "tanh"
    gate_with_scores: bool = True
    lift_hops: int = 1

    def __post_init__(self):
        if not 0.0 < self.ratio <= 1.0:
            raise ValueError(f"pooling ratio must be in (0, 1], got {self.ratio}")
        if self.num_lift_layers < 0:
            raise ValueError("num_lift_layers must be >= 0")
        if self.score_activation != "tanh":
            raise ValueError(f"unsupported score activation {self.score_activation!r}")
        if self.lift_hops < 1:
            raise ValueError("lift_hops must be >= 1")


@dataclasses.dataclass
class LiftParams:
    """Per-channel scale factors for one lifting layer: 2d trainable scalars."""

    theta_p: np.ndarray  # (1, d)
    theta_u: np.ndarray  # (1, d)


@dataclasses.dataclass
class ScoreParams:
    theta_s: np.ndarray  # (d, 1)


@dataclasses.dataclass
class PoolParams:
    """Tape-bound parameters for one pooling application."""

    theta_s: DiffMatrix  # d x 1
    lifts: list[tuple[DiffMatrix, DiffMatrix]]  # [(theta_p 1xd, theta_u 1xd), ...]

    @classmethod
    def on_tape(cls, tape, score: ScoreParams, lifts: list[LiftParams]) -> "PoolParams":
        """Register value-level parameters as leaves of ``tape``."""
        return cls(
            theta_s=tape.leaf(score.theta_s),
            lifts=[(tape.leaf(lp.theta_p), tape.leaf(lp.theta_u)) for lp in lifts],
        )


@dataclasses.dataclass
class PoolingOutcome:
    preserved: list[int]  # descending-score order, per graph
    removed: list[int]
    scores: np.ndarray  # per-node score values
    lifted_preserved: DiffMatrix  # |preserved| x d, before gating
    coarse_graph: Graph
    membership_out: np.ndarray
    features_out: DiffMatrix  # what the next layer consumes (gated if enabled)


@dataclasses.dataclass
class OpCounter:
    """Debug counter for lifting work, in multiply-accumulates."""

    macs: int = 0
    cut_edges: int = 0


def compute_scores(na: NormalizedAdjacency, h: DiffMatrix, theta_s: DiffMatrix) -> DiffMatrix:
    """Per-node attention scores tanh(W_a H theta_s), each in (-1, 1)."""
    return tanh_elem(matmul(matmul(constant(na.matrix), h), theta_s))


def topk_count(ratio: float, n: int) -> int:
    # round() guards ceil against float noise in ratio * n
    return max(1, math.ceil(round(ratio * n, 9)))


def select_topk(scores: np.ndarray, membership: np.ndarray, ratio: float) -> tuple[list[int], list[int]]:
    """Per graph, keep the top max(1, ceil(ratio * n)) nodes by score.

    Preserved nodes are listed in descending-score order (ties broken by
    smaller original index); removed nodes in ascending index order. Both
    lists concatenate per-graph blocks in graph order.
    """
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"pooling ratio must be in (0, 1], got {ratio}")
    s = np.asarray(scores, dtype=np.float64).ravel()
    mem = np.asarray(membership, dtype=np.intp)
    if s.size != mem.size:
        raise ValueError(f"{s.size} scores vs {mem.size} membership entries")
    preserved: list[int] = []
    removed: list[int] = []
    for gi in range(int(mem.max()) + 1 if mem.size else 0):
        nodes = np.flatnonzero(mem == gi)
        k = topk_count(ratio, nodes.size)
        order = sorted(nodes.tolist(), key=lambda i: (-s[i], i))
        preserved.extend(order[:k])
        removed.extend(sorted(order[k:]))
    return preserved, removed


def lift(
    na_lift: NormalizedAdjacency,
    h: DiffMatrix,
    preserved: list[int],
    removed: list[int],
    lifts: list[tuple[DiffMatrix, DiffMatrix]],
    counter: OpCounter | None = None,
) -> tuple[DiffMatrix, DiffMatrix | None]:
    """Apply stacked predict/update lifting layers across the cut.

    Per layer: the removed rows keep their residual after subtracting the
    prediction ReLU(M_pr H_p diag(theta_p)) aggregated from preserved
    neighbors, and the preserved rows absorb the update
    ReLU(M_rp H_r_hat diag(theta_u)) of that residual. M_pr is the
    removed x preserved cross-submatrix of ``na_lift``; M_rp its transpose.
    """
    if not preserved:
        raise ValueError("lift: preserved set must not be empty")
    if set(preserved) & set(removed):
        raise ValueError("lift: preserved and removed sets overlap")
    if len(preserved) + len(removed) != h.rows:
        raise ValueError(
            f"lift: partition covers {len(preserved) + len(removed)} of {h.rows} nodes"
        )
    d = h.cols
    for tp, tu in lifts:
        if tp.shape != (1, d) or tu.shape != (1, d):
            raise ValueError(
                f"lift: diagonals must be 1x{d}, got {tp.shape} and {tu.shape}"
            )
    h_p = row_select(h, preserved)
    if not removed:
        return h_p, None
    h_r = row_select(h, removed)
    m_pr = sp.csr_matrix(cross_submatrix(na_lift, removed, preserved))
    m_rp = m_pr.T.tocsr()
    if counter is not None:
        counter.cut_edges = m_pr.nnz
        counter.macs += 2 * len(lifts) * m_pr.nnz * d
    for tp, tu in lifts:
        pred = relu(col_scale(const_spmm(m_pr, h_p), tp))
        h_r = sub(h_r, pred)
        upd = relu(col_scale(const_spmm(m_rp, h_r), tu))
        h_p = add(h_p, upd)
    return h_p, h_r


def coarsen(
    g: Graph,
    h_hat_p: DiffMatrix,
    preserved: list[int],
    scores: DiffMatrix,
    gate_with_scores: bool,
) -> tuple[Graph, DiffMatrix]:
    """Restrict the graph to the preserved nodes and hand over their features.

    With gating on, each feature row is scaled by its node's score
    (differentiable through the score head).
    """
    coarse = induced_subgraph(g, preserved)
    if gate_with_scores:
        x_next = row_scale(h_hat_p, row_select(scores, preserved))
    else:
        x_next = h_hat_p
    return coarse, x_next


def liftpool(
    g: Graph,
    na: NormalizedAdjacency,
    h: DiffMatrix,
    membership: np.ndarray,
    cfg: PoolConfig,
    params: PoolParams,
    counter: OpCounter | None = None,
) -> PoolingOutcome:
    """Score, select, lift, coarsen: one full pooling application."""
    scores = compute_scores(na, h, params.theta_s)
    preserved, removed = select_topk(scores.values[:, 0], membership, cfg.ratio)
    if scores.tape is not None:
        scores.tape.add_guard("topk", np.asarray(preserved))
    if cfg.num_lift_layers > 0 and removed:
        if cfg.lift_hops == 1:
            na_lift = na
        else:
            na_lift = normalize_augment(khop_augment(g, cfg.lift_hops), na.mode, na.lam)
        lift_layers = params.lifts[: cfg.num_lift_layers]
        if len(lift_layers) != cfg.num_lift_layers:
            raise ValueError(
                f"liftpool: config wants {cfg.num_lift_layers} lifting layers, "
                f"params provide {len(params.lifts)}"
            )
        h_hat_p, _ = lift(na_lift, h, preserved, removed, lift_layers, counter)
    else:
        h_hat_p = row_select(h, preserved)
    coarse, x_next = coarsen(g, h_hat_p, preserved, scores, cfg.gate_with_scores)
    mem = np.asarray(membership, dtype=np.intp)
    return PoolingOutcome(
        preserved=list(preserved),
        removed=list(removed),
        scores=scores.values[:, 0].copy(),
        lifted_preserved=h_hat_p,
        coarse_graph=coarse,
        membership_out=mem[preserved],
        features_out=x_next,
    )


# ---------------------------------------------------------------------------
# classical lifting on 1-D signals (reference operation)


def classical_lift_1d(signal, predict_coeff, update_coeff) -> tuple[list[Fraction], list[Fraction]]:
    """Split/predict/update lifting of an even-length 1-D signal.

    Returns (approx, detail): detail[i] = odd[i] - P * even[i],
    approx[i] = even[i] + U * detail[i]. Computed in exact rational
    arithmetic so the backward transform reconstructs the input exactly,
    which float arithmetic cannot guarantee.
    """
    xs = [Fraction(v) for v in signal]
    if len(xs) % 2:
        raise ValueError(f"signal length must be even, got {len(xs)}")
    p, u = Fraction(predict_coeff), Fraction(update_coeff)
    even, odd = xs[0::2], xs[1::2]
    detail = [o - p * e for o, e in zip(odd, even)]
    approx = [e + u * d for e, d in zip(even, detail)]
    return approx, detail


def classical_lift_1d_inverse(approx, detail, predict_coeff, update_coeff) -> list[Fraction]:
    """Backward lifting: undo update, undo predict, interleave."""
    a = [Fraction(v) for v in approx]
    d = [Fraction(v) for v in detail]
    if len(a) != len(d):
        raise ValueError(f"approx/detail lengths differ: {len(a)} vs {len(d)}")
    p, u = Fraction(predict_coeff), Fraction(update_coeff)
    even = [ai - u * di for ai, di in zip(a, d)]
    odd = [di + p * ei for di, ei in zip(d, even)]
    out: list[Fraction] = []
    for e, o in zip(even, odd):
        out.extend((e, o))
    return out


# ---------------------------------------------------------------------------
# hierarchy dump (debug interface)


def hierarchy_to_json(levels: list[dict]) -> str:
    """Serialize a pooling hierarchy (list of per-level dicts) as JSON."""
    return json.dumps({"num_levels": len(levels), "levels": levels}, indent=2)


def hierarchy_to_dot(levels: list[dict]) -> str:
    """Render the hierarchy as DOT: one cluster per level, intra-level edges
    undirected, dashed arrows tracking preserved nodes into the next level."""
    lines = ["digraph pooling {", "  rankdir=TB;", "  node [shape=circle];"]
    for lv in levels:
        li = lv["level"]
        lines.append(f"  subgraph cluster_level{li} {{")
        lines.append(f'    label="level {li} ({lv["num_nodes"]} nodes)";')
        preserved = set(lv["preserved"])
        for node in range(lv["num_nodes"]):
            score = lv["scores"][node]
            style = ', style=filled, fillcolor="lightblue"' if node in preserved else ""
            lines.append(f'    L{li}_{node} [label="{node}\\n{score:.3f}"{style}];')
        for i, j, _w in lv["edges"]:
            lines.append(f"    L{li}_{i} -> L{li}_{j} [dir=none];")
        lines.append("  }")
    if levels:
        last = levels[-1]
        lf = last["level"] + 1
        lines.append(f"  subgraph cluster_level{lf} {{")
        lines.append(f'    label="level {lf} ({len(last["preserved"])} nodes)";')
        for node in range(len(last["preserved"])):
            lines.append(f'    L{lf}_{node} [label="{node}"];')
        for i, j, _w in last["coarse_edges"]:
            lines.append(f"    L{lf}_{i} -> L{lf}_{j} [dir=none];")
        lines.append("  }")
    for lv in levels:
        li = lv["level"]
        for new_idx, old_idx in enumerate(lv["preserved"]):
            lines.append(f"  L{li}_{old_idx} -> L{li + 1}_{new_idx} [style=dashed];")
    lines.append("}")
    return "\n".join(lines) + "\n"
