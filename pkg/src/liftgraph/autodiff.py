"""Dense matrix arithmetic with reverse-mode differentiation on an explicit tape.

Every differentiable value is a :class:`DiffMatrix`: a 2-D float array plus an
optional node id on a :class:`Tape`. Operations record a backward closure per
differentiable input; :func:`backward` replays the tape in reverse to produce
gradients. One tape per forward pass; there is no global state.

No silent broadcasting: every operation either returns a matrix whose shape is
a total function of the input shapes or raises :class:`ShapeError`. The few
ops that combine different shapes (``col_scale``, ``row_scale``, ``add_bias``)
state their shape contract explicitly.
"""

from __future__ import annotations

import dataclasses
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp


class ShapeError(ValueError):
    """Raised when operand shapes do not conform."""


class TapeMixError(ValueError):
    """Raised when one operation mixes values from two different tapes."""


# A backward contribution: (input node id, closure mapping output grad -> input grad).
_Contrib = tuple[int, Callable[[np.ndarray], np.ndarray]]


@dataclasses.dataclass
class _Node:
    contribs: tuple[_Contrib, ...]


class Tape:
    """Ordered record of operations for one forward pass.

    ``guards`` collects piecewise-linearity signatures (ReLU activation signs,
    argmax choices, top-k selections). :func:`grad_check` compares guard
    signatures between perturbed evaluations to detect kink crossings.
    """

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self._nodes: list[_Node] = []
        self.guards: list[tuple[str, np.ndarray]] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def leaf(self, values) -> "DiffMatrix":
        """Register an input (parameter) matrix as a gradient target."""
        arr = _as_matrix(values, self.dtype)
        self._nodes.append(_Node(contribs=()))
        return DiffMatrix(arr, self, len(self._nodes) - 1)

    def add_guard(self, kind: str, payload: np.ndarray) -> None:
        self.guards.append((kind, np.asarray(payload)))

    def _record(self, values: np.ndarray, contribs: Sequence[_Contrib]) -> "DiffMatrix":
        self._nodes.append(_Node(contribs=tuple(contribs)))
        return DiffMatrix(values, self, len(self._nodes) - 1)


class DiffMatrix:
    """A 2-D matrix value, optionally attached to a tape node."""

    __slots__ = ("values", "tape", "node_id")

    def __init__(self, values, tape: Tape | None = None, node_id: int | None = None):
        self.values = _as_matrix(values, tape.dtype if tape is not None else None)
        self.tape = tape
        self.node_id = node_id

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __repr__(self) -> str:
        tag = "const" if self.node_id is None else f"node {self.node_id}"
        return f"DiffMatrix({self.rows}x{self.cols}, {tag})"

    def __matmul__(self, other: "DiffMatrix") -> "DiffMatrix":
        return matmul(self, other)

    def __add__(self, other: "DiffMatrix") -> "DiffMatrix":
        return add(self, other)

    def __sub__(self, other: "DiffMatrix") -> "DiffMatrix":
        return sub(self, other)

    def __mul__(self, other: "DiffMatrix") -> "DiffMatrix":
        return hadamard(self, other)


def constant(values, dtype=None) -> DiffMatrix:
    """Wrap an array as a non-differentiable matrix (no tape node)."""
    return DiffMatrix(_as_matrix(values, dtype))


def _as_matrix(values, dtype) -> np.ndarray:
    # dtype=None keeps an existing float array as-is, defaulting to float64
    if dtype is None:
        arr = np.asarray(values)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
    else:
        arr = np.asarray(values, dtype=dtype)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {arr.shape}")
    return arr


def _tape_of(*mats: DiffMatrix) -> Tape | None:
    tape = None
    for m in mats:
        if m.tape is None:
            continue
        if tape is None:
            tape = m.tape
        elif tape is not m.tape:
            raise TapeMixError("operands recorded on different tapes")
    return tape


def _emit(tape: Tape | None, values: np.ndarray, contribs: Sequence[_Contrib]) -> DiffMatrix:
    if tape is None:
        return DiffMatrix(values)
    return tape._record(values, contribs)


def _contrib(m: DiffMatrix, fn: Callable[[np.ndarray], np.ndarray]) -> list[_Contrib]:
    return [(m.node_id, fn)] if m.node_id is not None else []


# ---------------------------------------------------------------------------
# binary / elementwise ops


def matmul(a: DiffMatrix, b: DiffMatrix) -> DiffMatrix:
    """Matrix product a @ b. Gradients: d/da = g b^T, d/db = a^T g."""
    if a.cols != b.rows:
        raise ShapeError(f"matmul: inner dimensions differ for shapes {a.shape} and {b.shape}")
    tape = _tape_of(a, b)
    av, bv = a.values, b.values
    out = av @ bv
    contribs = _contrib(a, lambda g: g @ bv.T) + _contrib(b, lambda g: av.T @ g)
    return _emit(tape, out, contribs)


def _same_shape(op: str, a: DiffMatrix, b: DiffMatrix) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: DiffMatrix, b: DiffMatrix) -> DiffMatrix:
    _same_shape("add", a, b)
    tape = _tape_of(a, b)
    contribs = _contrib(a, lambda g: g) + _contrib(b, lambda g: g)
    return _emit(tape, a.values + b.values, contribs)


def sub(a: DiffMatrix, b: DiffMatrix) -> DiffMatrix:
    _same_shape("sub", a, b)
    tape = _tape_of(a, b)
    contribs = _contrib(a, lambda g: g) + _contrib(b, lambda g: -g)
    return _emit(tape, a.values - b.values, contribs)


def hadamard(a: DiffMatrix, b: DiffMatrix) -> DiffMatrix:
    _same_shape("hadamard", a, b)
    tape = _tape_of(a, b)
    av, bv = a.values, b.values
    contribs = _contrib(a, lambda g: g * bv) + _contrib(b, lambda g: g * av)
    return _emit(tape, av * bv, contribs)


def scale(a: DiffMatrix, c: float) -> DiffMatrix:
    c = float(c)
    tape = _tape_of(a)
    return _emit(tape, a.values * c, _contrib(a, lambda g: g * c))


def relu(a: DiffMatrix) -> DiffMatrix:
    """Elementwise max(x, 0). Subgradient at exactly 0 is 0."""
    tape = _tape_of(a)
    mask = a.values > 0
    if tape is not None:
        tape.add_guard("relu", mask)
    return _emit(tape, np.where(mask, a.values, 0.0), _contrib(a, lambda g: g * mask))


def tanh_elem(a: DiffMatrix) -> DiffMatrix:
    tape = _tape_of(a)
    out = np.tanh(a.values)
    return _emit(tape, out, _contrib(a, lambda g: g * (1.0 - out * out)))


# ---------------------------------------------------------------------------
# structural ops


def _check_index_list(idx, n: int, what: str) -> np.ndarray:
    arr = np.asarray(idx, dtype=np.intp)
    if arr.ndim != 1:
        raise IndexError(f"{what}: index list must be 1-D")
    if arr.size and (arr.min() < 0 or arr.max() >= n):
        raise IndexError(f"{what}: index out of range for {n} rows: {arr.tolist()}")
    if len(np.unique(arr)) != arr.size:
        raise IndexError(f"{what}: duplicate indices: {arr.tolist()}")
    return arr


def row_select(a: DiffMatrix, idx) -> DiffMatrix:
    """Select rows in the given order. Backward scatters the gradient back."""
    sel = _check_index_list(idx, a.rows, "row_select")
    tape = _tape_of(a)
    shape = a.shape

    def back(g: np.ndarray) -> np.ndarray:
        z = np.zeros(shape, dtype=g.dtype)
        z[sel] = g
        return z

    return _emit(tape, a.values[sel], _contrib(a, back))


def concat_cols(a: DiffMatrix, b: DiffMatrix) -> DiffMatrix:
    if a.rows != b.rows:
        raise ShapeError(f"concat_cols: row counts differ for shapes {a.shape} and {b.shape}")
    tape = _tape_of(a, b)
    ca = a.cols
    contribs = _contrib(a, lambda g: g[:, :ca]) + _contrib(b, lambda g: g[:, ca:])
    return _emit(tape, np.hstack([a.values, b.values]), contribs)


def vstack(mats: Sequence[DiffMatrix]) -> DiffMatrix:
    """Stack matrices vertically; all must share a column count."""
    if not mats:
        raise ShapeError("vstack: need at least one matrix")
    cols = mats[0].cols
    for m in mats:
        if m.cols != cols:
            raise ShapeError(f"vstack: column counts differ ({m.cols} vs {cols})")
    tape = _tape_of(*mats)
    contribs: list[_Contrib] = []
    start = 0
    for m in mats:
        lo, hi = start, start + m.rows
        contribs += _contrib(m, lambda g, lo=lo, hi=hi: g[lo:hi])
        start = hi
    return _emit(tape, np.vstack([m.values for m in mats]), contribs)


def mean_rows(a: DiffMatrix) -> DiffMatrix:
    tape = _tape_of(a)
    m = a.rows
    out = a.values.mean(axis=0, keepdims=True)
    return _emit(tape, out, _contrib(a, lambda g: np.broadcast_to(g / m, (m, g.shape[1])).copy()))


def max_rows(a: DiffMatrix) -> DiffMatrix:
    """Column-wise max over rows; gradient routed to the first argmax row."""
    tape = _tape_of(a)
    arg = np.argmax(a.values, axis=0)
    if tape is not None:
        tape.add_guard("argmax", arg)
    cols = np.arange(a.cols)
    shape = a.shape

    def back(g: np.ndarray) -> np.ndarray:
        z = np.zeros(shape, dtype=g.dtype)
        z[arg, cols] = g[0]
        return z

    return _emit(tape, a.values[arg, cols][None, :], _contrib(a, back))


def sum_all(a: DiffMatrix) -> DiffMatrix:
    tape = _tape_of(a)
    shape = a.shape
    out = np.array([[a.values.sum()]], dtype=a.values.dtype)
    return _emit(tape, out, _contrib(a, lambda g: np.full(shape, g[0, 0], dtype=g.dtype)))


def col_scale(a: DiffMatrix, s: DiffMatrix) -> DiffMatrix:
    """Scale column j of ``a`` by ``s[0, j]``; ``s`` must be 1 x a.cols."""
    if s.shape != (1, a.cols):
        raise ShapeError(f"col_scale: scaler shape {s.shape} does not match columns of {a.shape}")
    tape = _tape_of(a, s)
    av, sv = a.values, s.values
    contribs = _contrib(a, lambda g: g * sv) + _contrib(
        s, lambda g: (g * av).sum(axis=0, keepdims=True)
    )
    return _emit(tape, av * sv, contribs)


def row_scale(a: DiffMatrix, s: DiffMatrix) -> DiffMatrix:
    """Scale row i of ``a`` by ``s[i, 0]``; ``s`` must be a.rows x 1."""
    if s.shape != (a.rows, 1):
        raise ShapeError(f"row_scale: scaler shape {s.shape} does not match rows of {a.shape}")
    tape = _tape_of(a, s)
    av, sv = a.values, s.values
    contribs = _contrib(a, lambda g: g * sv) + _contrib(
        s, lambda g: (g * av).sum(axis=1, keepdims=True)
    )
    return _emit(tape, av * sv, contribs)


def add_bias(a: DiffMatrix, b: DiffMatrix) -> DiffMatrix:
    """Add a 1 x a.cols bias row to every row of ``a``."""
    if b.shape != (1, a.cols):
        raise ShapeError(f"add_bias: bias shape {b.shape} does not match columns of {a.shape}")
    tape = _tape_of(a, b)
    contribs = _contrib(a, lambda g: g) + _contrib(b, lambda g: g.sum(axis=0, keepdims=True))
    return _emit(tape, a.values + b.values, contribs)


def const_spmm(m: sp.spmatrix, a: DiffMatrix) -> DiffMatrix:
    """Product of a constant sparse matrix with ``a``; differentiable in ``a`` only.

    Work is proportional to nnz(m) * a.cols, which is what makes the lifting
    stage's cost bound on cut edges real rather than nominal.
    """
    mc = m.tocsr()
    if mc.shape[1] != a.rows:
        raise ShapeError(f"const_spmm: inner dimensions differ for shapes {mc.shape} and {a.shape}")
    tape = _tape_of(a)
    mt = mc.T.tocsr()
    return _emit(tape, mc @ a.values, _contrib(a, lambda g: mt @ g))


# ---------------------------------------------------------------------------
# loss


def softmax_cross_entropy(logits: DiffMatrix, labels) -> DiffMatrix:
    """Mean over rows of -log softmax(logits)[label], max-stabilized.

    Backward is (softmax - onehot) / batch, scaled by the incoming gradient.
    """
    lab = np.asarray(labels, dtype=np.intp)
    if lab.ndim != 1 or lab.size != logits.rows:
        raise ShapeError(
            f"softmax_cross_entropy: {logits.rows} logit rows vs {lab.size} labels"
        )
    if lab.size and (lab.min() < 0 or lab.max() >= logits.cols):
        raise IndexError(f"label out of range [0, {logits.cols}): {lab.tolist()}")
    tape = _tape_of(logits)
    z = logits.values - logits.values.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(lab.size)
    out = np.array([[-logp[rows, lab].mean()]], dtype=logits.values.dtype)
    softmax = np.exp(logp)

    def back(g: np.ndarray) -> np.ndarray:
        d = softmax.copy()
        d[rows, lab] -= 1.0
        return d * (g[0, 0] / lab.size)

    return _emit(tape, out, _contrib(logits, back))


# ---------------------------------------------------------------------------
# backward pass and finite-difference checking


def backward(tape: Tape, root: DiffMatrix) -> dict[int, DiffMatrix]:
    """Gradients of the scalar ``root`` w.r.t. every reachable tape node.

    Visits each node exactly once, in reverse recording order, with a fixed
    accumulation order: identical tapes give bit-identical gradients.
    """
    if root.tape is not tape or root.node_id is None:
        raise ValueError("root is not recorded on this tape")
    if root.shape != (1, 1):
        raise ShapeError(f"backward: root must be 1x1, got {root.shape}")
    grads: dict[int, np.ndarray] = {root.node_id: np.ones((1, 1), dtype=tape.dtype)}
    for nid in range(root.node_id, -1, -1):
        g = grads.get(nid)
        if g is None:
            continue
        for iid, fn in tape._nodes[nid].contribs:
            gi = fn(g)
            prev = grads.get(iid)
            grads[iid] = gi if prev is None else prev + gi
    return {nid: constant(g, dtype=tape.dtype) for nid, g in grads.items()}


@dataclasses.dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    failures: list[tuple[str, int, float]]
    kinked: list[tuple[str, int]]
    tol: float

    @property
    def ok(self) -> bool:
        return not self.failures


def _guards_match(g1: list[tuple[str, np.ndarray]], g2: list[tuple[str, np.ndarray]]) -> bool:
    if len(g1) != len(g2):
        return False
    for (k1, a1), (k2, a2) in zip(g1, g2):
        if k1 != k2 or a1.shape != a2.shape or not np.array_equal(a1, a2):
            return False
    return True


def grad_check(
    build: Callable[[dict[str, DiffMatrix]], DiffMatrix],
    params: dict[str, np.ndarray],
    h: float = 1e-6,
    tol: float = 1e-5,
) -> GradCheckReport:
    """Compare tape gradients against central finite differences.

    ``build`` receives tape leaves (one per entry of ``params``) and must
    return a 1x1 DiffMatrix on their tape, using only those leaves and
    constants. Coordinates whose +h / -h evaluations disagree on any guard
    signature (ReLU sign, argmax row, top-k selection) crossed a kink of the
    piecewise-smooth function; they are flagged and excluded instead of
    producing a meaningless difference quotient.
    """
    if h <= 0:
        raise ValueError("grad_check: h must be positive")
    base = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}

    def run(vals: dict[str, np.ndarray]):
        tape = Tape()
        leaves = {k: tape.leaf(v) for k, v in vals.items()}
        out = build(leaves)
        if out.shape != (1, 1):
            raise ShapeError(f"grad_check: build must return a 1x1 scalar, got {out.shape}")
        return out, tape, leaves

    out, tape, leaves = run(base)
    grads = backward(tape, out)
    analytic = {
        k: (grads[lv.node_id].values if lv.node_id in grads else np.zeros_like(base[k]))
        for k, lv in leaves.items()
    }

    max_rel = 0.0
    n_checked = 0
    failures: list[tuple[str, int, float]] = []
    kinked: list[tuple[str, int]] = []
    for name, arr in base.items():
        flat = arr.ravel()
        for j in range(flat.size):
            sides = []
            for sgn in (+1.0, -1.0):
                vals = {k: v.copy() for k, v in base.items()}
                vals[name].ravel()[j] += sgn * h
                o, t, _ = run(vals)
                sides.append((float(o.values[0, 0]), t.guards))
            (fp, gp), (fm, gm) = sides
            if not _guards_match(gp, gm):
                kinked.append((name, j))
                continue
            fd = (fp - fm) / (2.0 * h)
            ga = float(analytic[name].ravel()[j])
            rel = abs(ga - fd) / max(abs(ga), abs(fd), 1.0)
            n_checked += 1
            max_rel = max(max_rel, rel)
            if rel > tol:
                failures.append((name, j, rel))
    return GradCheckReport(max_rel, n_checked, failures, kinked, tol)
