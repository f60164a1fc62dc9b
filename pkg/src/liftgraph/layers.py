"""Graph convolution and graph-level readout blocks."""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .autodiff import (
    DiffMatrix,
    ShapeError,
    concat_cols,
    constant,
    matmul,
    max_rows,
    mean_rows,
    relu,
    row_select,
    vstack,
)
from .graphs import NormalizedAdjacency


@dataclasses.dataclass
class GCNLayerParams:
    """Trainable d_in x d_out weight for one convolution layer."""

    theta: np.ndarray
    name: str

    @classmethod
    def glorot_init(cls, d_in: int, d_out: int, name: str, rng: np.random.Generator) -> "GCNLayerParams":
        return cls(theta=glorot(d_in, d_out, rng), name=name)


def glorot(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    limit = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def gcn_forward(na: NormalizedAdjacency, x: DiffMatrix, theta: DiffMatrix) -> DiffMatrix:
    """ReLU(W_a X Theta), differentiable through x and theta."""
    if x.rows != na.size:
        raise ShapeError(f"gcn_forward: {x.rows} feature rows vs adjacency size {na.size}")
    if x.cols != theta.rows:
        raise ShapeError(f"gcn_forward: feature dim {x.cols} vs weight shape {theta.shape}")
    return relu(matmul(matmul(constant(na.matrix), x), theta))


def readout(h: DiffMatrix, membership: np.ndarray) -> DiffMatrix:
    """Per-graph mean || max over node rows, one row per graph.

    ``membership`` assigns each row of ``h`` to a graph index in
    [0, num_graphs); every graph must own at least one row.
    """
    mem = np.asarray(membership, dtype=np.intp)
    if mem.size != h.rows:
        raise ShapeError(f"readout: membership covers {mem.size} rows, h has {h.rows}")
    num_graphs = int(mem.max()) + 1 if mem.size else 0
    rows = []
    for gi in range(num_graphs):
        idx = np.flatnonzero(mem == gi)
        if idx.size == 0:
            raise ValueError(f"readout: graph {gi} has no nodes")
        sel = row_select(h, idx)
        rows.append(concat_cols(mean_rows(sel), max_rows(sel)))
    return vstack(rows)
