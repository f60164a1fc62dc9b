"""Hierarchical classification network: stacked (convolution -> pooling)
blocks with per-block readout, readouts summed, then a two-layer head.

Parameters live between passes as plain float64 arrays in a name -> array
map with stable names ("block0.gcn.theta", "block1.lift0.theta_p",
"head.w2", ...); each forward pass wraps them as leaves on a fresh tape.
"""

from __future__ import annotations

import dataclasses
import struct

import numpy as np

from .autodiff import (
    DiffMatrix,
    ShapeError,
    Tape,
    add,
    add_bias,
    constant,
    hadamard,
    matmul,
    relu,
)
from .graphs import Graph, normalize_augment
from .layers import gcn_forward, glorot, readout
from .pooling import OpCounter, PoolConfig, PoolingOutcome, PoolParams, liftpool

PARAMS_MAGIC = b"LGPM"
PARAMS_VERSION = 1


@dataclasses.dataclass
class ModelConfig:
    in_dim: int
    num_classes: int
    hidden_dim: int = 128
    num_blocks: int = 3
    pool: PoolConfig = dataclasses.field(default_factory=PoolConfig)
    classifier_hidden: int | None = None  # defaults to hidden_dim
    dropout_rate: float = 0.5
    norm_mode: str = "symmetric_sqrt"
    lam: float = 1.0

    def __post_init__(self):
        if self.in_dim < 1 or self.num_classes < 1 or self.hidden_dim < 1:
            raise ValueError("dimensions and class count must be positive")
        if self.num_blocks < 1:
            raise ValueError("num_blocks must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.dropout_rate}")
        if self.classifier_hidden is None:
            self.classifier_hidden = self.hidden_dim


@dataclasses.dataclass
class ModelParams:
    """All trainable tensors, addressable by stable names."""

    values: dict[str, np.ndarray]

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.values.items()})


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, int]]:
    """Name -> shape map, a total function of the configuration."""
    shapes: dict[str, tuple[int, int]] = {}
    d = cfg.hidden_dim
    for b in range(cfg.num_blocks):
        d_in = cfg.in_dim if b == 0 else d
        shapes[f"block{b}.gcn.theta"] = (d_in, d)
        shapes[f"block{b}.score.theta_s"] = (d, 1)
        for j in range(cfg.pool.num_lift_layers):
            shapes[f"block{b}.lift{j}.theta_p"] = (1, d)
            shapes[f"block{b}.lift{j}.theta_u"] = (1, d)
    ch = cfg.classifier_hidden
    shapes["head.w1"] = (2 * d, ch)
    shapes["head.b1"] = (1, ch)
    shapes["head.w2"] = (ch, cfg.num_classes)
    shapes["head.b2"] = (1, cfg.num_classes)
    return shapes


def init_params(cfg: ModelConfig, seed: int, zero_head: bool = False) -> ModelParams:
    """Glorot-uniform weights, zero biases, unit lifting diagonals.

    Lifting diagonals start at 1: a zero start would sit on the flat side of
    the ReLU and never receive gradient.
    """
    rng = np.random.default_rng(seed)
    values: dict[str, np.ndarray] = {}
    for name, (r, c) in param_shapes(cfg).items():
        if ".lift" in name:
            values[name] = np.ones((r, c))
        elif name.endswith((".b1", ".b2")):
            values[name] = np.zeros((r, c))
        elif zero_head and name.startswith("head."):
            values[name] = np.zeros((r, c))
        else:
            values[name] = glorot(r, c, rng)
    return ModelParams(values)


def count_params(params: ModelParams) -> tuple[dict[str, int], int]:
    counts = {name: int(v.size) for name, v in params.values.items()}
    return counts, sum(counts.values())


@dataclasses.dataclass
class ForwardResult:
    logits: DiffMatrix
    tape: Tape
    leaves: dict[str, DiffMatrix]
    outcomes: list[PoolingOutcome]


def _pool_params(leaves: dict[str, DiffMatrix], block: int, n_lift: int) -> PoolParams:
    return PoolParams(
        theta_s=leaves[f"block{block}.score.theta_s"],
        lifts=[
            (leaves[f"block{block}.lift{j}.theta_p"], leaves[f"block{block}.lift{j}.theta_u"])
            for j in range(n_lift)
        ],
    )


def forward(
    graph: Graph,
    membership: np.ndarray,
    params: ModelParams | None,
    cfg: ModelConfig,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
    counter: OpCounter | None = None,
    leaves: dict[str, DiffMatrix] | None = None,
) -> ForwardResult:
    """Run the full network on a (possibly batched) graph.

    Returns the logits plus the tape and parameter leaves needed for a
    backward pass, and the per-level pooling outcomes for inspection.
    Callers that manage their own tape (gradient checking) pass ``leaves``
    directly and may leave ``params`` as None.
    """
    if graph.feature_dim != cfg.in_dim:
        raise ShapeError(f"feature dim {graph.feature_dim} does not match config in_dim {cfg.in_dim}")
    mem = np.asarray(membership, dtype=np.intp)
    if mem.size != graph.num_nodes:
        raise ShapeError(f"membership covers {mem.size} nodes, graph has {graph.num_nodes}")
    num_graphs = int(mem.max()) + 1
    counts = np.bincount(mem, minlength=num_graphs)
    if (counts == 0).any():
        raise ValueError(f"batch contains an empty graph: {np.flatnonzero(counts == 0).tolist()}")
    if train_mode and cfg.dropout_rate > 0 and rng is None:
        raise ValueError("train_mode with dropout needs a random generator")

    if leaves is None:
        tape = Tape()
        leaves = {name: tape.leaf(v) for name, v in params.values.items()}
    else:
        tape = next(iter(leaves.values())).tape
    g, x = graph, constant(graph.features)
    outcomes: list[PoolingOutcome] = []
    readouts = []
    for b in range(cfg.num_blocks):
        na = normalize_augment(g, cfg.norm_mode, cfg.lam)
        h = gcn_forward(na, x, leaves[f"block{b}.gcn.theta"])
        out = liftpool(g, na, h, mem, cfg.pool, _pool_params(leaves, b, cfg.pool.num_lift_layers), counter)
        readouts.append(readout(out.features_out, out.membership_out))
        outcomes.append(out)
        g, x, mem = out.coarse_graph, out.features_out, out.membership_out
    summed = readouts[0]
    for r in readouts[1:]:
        summed = add(summed, r)

    z = relu(add_bias(matmul(summed, leaves["head.w1"]), leaves["head.b1"]))
    if train_mode and cfg.dropout_rate > 0:
        keep = 1.0 - cfg.dropout_rate
        mask = (rng.random(z.shape) < keep) / keep
        z = hadamard(z, constant(mask))
    logits = add_bias(matmul(z, leaves["head.w2"]), leaves["head.b2"])
    return ForwardResult(logits, tape, leaves, outcomes)


def trace_pooling(graph: Graph, params: ModelParams, cfg: ModelConfig) -> list[dict]:
    """Per-level pooling record for one graph: nodes, edges, scores,
    preserved/removed sets, and the coarsened edge set."""
    res = forward(graph, np.zeros(graph.num_nodes, dtype=np.intp), params, cfg, train_mode=False)
    levels = []
    g = graph
    for li, out in enumerate(res.outcomes):
        levels.append(
            {
                "level": li,
                "num_nodes": g.num_nodes,
                "node_ids": [int(i) for i in (g.node_ids if g.node_ids is not None else range(g.num_nodes))],
                "edges": [[int(i), int(j), float(w)] for i, j, w in g.edges()],
                "scores": [float(s) for s in out.scores],
                "preserved": [int(i) for i in out.preserved],
                "removed": [int(i) for i in out.removed],
                "coarse_edges": [[int(i), int(j), float(w)] for i, j, w in out.coarse_graph.edges()],
            }
        )
        g = out.coarse_graph
    return levels


# ---------------------------------------------------------------------------
# parameter serialization: little-endian binary, bit-exact round trip


def save_params(params: ModelParams, path) -> None:
    """Write all tensors: magic, version, name/shape table, raw f64 values."""
    with open(path, "wb") as f:
        f.write(PARAMS_MAGIC)
        f.write(struct.pack("<II", PARAMS_VERSION, len(params.values)))
        for name, arr in params.values.items():
            enc = name.encode("utf-8")
            f.write(struct.pack("<H", len(enc)))
            f.write(enc)
            f.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
        for arr in params.values.values():
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_params(path, cfg: ModelConfig | None = None) -> ModelParams:
    """Read a parameter file; validates shapes against ``cfg`` when given."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != PARAMS_MAGIC:
            raise ValueError(f"{path}: not a parameter file (bad magic {magic!r})")
        version, count = struct.unpack("<II", f.read(8))
        if version != PARAMS_VERSION:
            raise ValueError(f"{path}: unsupported version {version}, expected {PARAMS_VERSION}")
        shapes: list[tuple[str, int, int]] = []
        for _ in range(count):
            (nlen,) = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode("utf-8")
            r, c = struct.unpack("<II", f.read(8))
            shapes.append((name, r, c))
        values: dict[str, np.ndarray] = {}
        for name, r, c in shapes:
            raw = f.read(8 * r * c)
            if len(raw) != 8 * r * c:
                raise ValueError(f"{path}: truncated values for tensor {name!r}")
            values[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(r, c)
    params = ModelParams(values)
    if cfg is not None:
        expected = param_shapes(cfg)
        if set(values) != set(expected):
            missing = sorted(set(expected) - set(values))
            extra = sorted(set(values) - set(expected))
            raise ShapeError(f"{path}: tensor names mismatch (missing {missing}, extra {extra})")
        for name, shp in expected.items():
            if values[name].shape != shp:
                raise ShapeError(
                    f"{path}: tensor {name!r} has shape {values[name].shape}, config expects {shp}"
                )
    return params
