"""Minimal reverse-mode differentiation over dense 2-D arrays.

Every operation appends one node to a :class:`Tape`; the tape order is a
topological order, so :func:`backward` is a single reverse sweep.  Sparse
matrices enter only as constants through :func:`spmm_const`.

Scalars are 1x1 tensors.  Broadcasting is limited to (matrix, scalar).
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import NumericError, ShapeError
from .graph import LabelVector, SparseAdjacency


class Tensor:
    """Dense row-major matrix that can take part in a tape."""

    __slots__ = ("data", "requires_grad", "tape", "node_id", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.array(data, dtype=dtype if dtype is not None else None, copy=True)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.tape: Tape | None = None
        self.node_id: int | None = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.tape = None
        t.node_id = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item() needs a 1x1 tensor")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"


@dataclass
class _Node:
    op: str
    out: Tensor
    inputs: tuple[Tensor, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None


class Tape:
    """Append-only record of operations.

    Leaves (tensors created by the user) are registered lazily the first
    time an operation consumes them, so the same parameter tensor can be
    reused across many tapes.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._leaf_index: dict[int, int] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def node_of(self, t: Tensor) -> int | None:
        if t.tape is self:
            return t.node_id
        return self._leaf_index.get(id(t))

    def _register_leaf(self, t: Tensor) -> int:
        idx = self._leaf_index.get(id(t))
        if idx is None:
            idx = len(self.nodes)
            self.nodes.append(_Node("leaf", t, (), None))
            self._leaf_index[id(t)] = idx
        return idx

    def _absorb(self, other: "Tape") -> None:
        """Append another tape's nodes; both were independent, so order stays topological."""
        for node in other.nodes:
            if node.op == "leaf":
                self._register_leaf(node.out)
                continue
            node.out.tape = self
            node.out.node_id = len(self.nodes)
            self.nodes.append(node)
        other.nodes = []
        other._leaf_index = {}

    def leaves(self) -> Iterator[Tensor]:
        for node in self.nodes:
            if node.op == "leaf":
                yield node.out


def _record(op: str, inputs: Sequence[Tensor], out: np.ndarray, vjp) -> Tensor:
    if not np.all(np.isfinite(out)):
        raise NumericError(f"non-finite values produced by {op}")
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is None:
                tape = t.tape
            elif t.tape is not tape:
                tape._absorb(t.tape)
    if tape is None:
        tape = Tape()
    for t in inputs:
        if t.tape is None:
            tape._register_leaf(t)
    result = Tensor._wrap(out)
    result.requires_grad = any(t.requires_grad for t in inputs)
    result.tape = tape
    result.node_id = len(tape.nodes)
    tape.nodes.append(_Node(op, result, tuple(inputs), vjp))
    return result


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# --------------------------------------------------------------------------- operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    A, B = a.data, b.data
    return _record("matmul", (a, b), A @ B, lambda G: (G @ B.T, A.T @ G))


def spmm_const(s: SparseAdjacency, x: Tensor) -> Tensor:
    """Product with a constant sparse matrix; only ``x`` receives a gradient."""
    if s.n_cols != x.rows:
        raise ShapeError(f"spmm: cannot multiply {s.shape} by {x.shape}")
    out = np.asarray(s.csr @ x.data)
    return _record("spmm", (x,), out, lambda G: (np.asarray(s.csr_t @ G),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _record("relu", (x,), np.where(mask, x.data, 0.0).astype(x.data.dtype), lambda G: (G * mask,))


def sigmoid(x: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-x.data))
    return _record("sigmoid", (x,), out, lambda G: (G * out * (1.0 - out),))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes on the closed interval."""
    inside = (x.data >= lo) & (x.data <= hi)
    return _record("clip", (x,), np.clip(x.data, lo, hi), lambda G: (G * inside,))


def scale(x: Tensor, c) -> Tensor:
    """c * x for a Python float or a 1x1 tensor ``c``."""
    if isinstance(c, Tensor):
        if c.shape != (1, 1):
            raise ShapeError("scale factor tensor must be 1x1")
        cv = c.data[0, 0]
        X = x.data
        return _record(
            "scale", (x, c), cv * X,
            lambda G: (cv * G, np.array([[np.sum(G * X)]], dtype=X.dtype)),
        )
    c = float(c)
    return _record("scale", (x,), c * x.data, lambda G: (c * G,))


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "add")
    return _record("add", (a, b), a.data + b.data, lambda G: (G, G))


def affine_combine(mu, a: Tensor, b: Tensor) -> Tensor:
    """mu * a + (1 - mu) * b, with the gradient also flowing into ``mu``."""
    _check_same(a, b, "affine_combine")
    A, B = a.data, b.data
    if isinstance(mu, Tensor):
        if mu.shape != (1, 1):
            raise ShapeError("mu must be a 1x1 tensor")
        m = mu.data[0, 0]
        return _record(
            "affine_combine", (mu, a, b), m * A + (1.0 - m) * B,
            lambda G: (np.array([[np.sum(G * (A - B))]], dtype=A.dtype), m * G, (1.0 - m) * G),
        )
    m = float(mu)
    return _record("affine_combine", (a, b), m * A + (1.0 - m) * B, lambda G: (m * G, (1.0 - m) * G))


def element(t: Tensor, i: int, j: int) -> Tensor:
    """The (i, j) entry as a 1x1 tensor."""
    rows, cols = t.shape

    def vjp(G):
        g = np.zeros((rows, cols), dtype=G.dtype)
        g[i, j] = G[0, 0]
        return (g,)

    return _record("element", (t,), t.data[i : i + 1, j : j + 1].copy(), vjp)


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Column-wise concatenation."""
    if a.rows != b.rows:
        raise ShapeError(f"concat: row counts {a.rows} and {b.rows} differ")
    k = a.cols
    return _record("concat", (a, b), np.hstack([a.data, b.data]), lambda G: (G[:, :k], G[:, k:]))


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _record(
        "sum", (x,), np.array([[x.data.sum()]], dtype=x.data.dtype),
        lambda G: (np.full(shape, G[0, 0], dtype=G.dtype),),
    )


def softmax_cross_entropy(logits: Tensor, y, mask) -> Tensor:
    """Mean negative log-likelihood over the rows listed in ``mask``."""
    labels = y.labels if isinstance(y, LabelVector) else np.asarray(y, dtype=np.int64)
    idx = _mask_indices(mask, logits.rows)
    if idx.size == 0:
        raise ValueError("cross entropy over an empty mask")
    if labels.shape[0] != logits.rows:
        raise ShapeError("one label per logit row required")
    Z = logits.data[idx]
    Z = Z - Z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(Z).sum(axis=1))
    t = labels[idx]
    loss = np.mean(logsum - Z[np.arange(idx.size), t])
    probs = np.exp(Z - logsum[:, None])

    def vjp(G):
        g = np.zeros_like(logits.data)
        d = probs.copy()
        d[np.arange(idx.size), t] -= 1.0
        g[idx] = d * (G[0, 0] / idx.size)
        return (g,)

    return _record("cross_entropy", (logits,), np.array([[loss]], dtype=logits.data.dtype), vjp)


def _mask_indices(mask, n: int) -> np.ndarray:
    m = np.asarray(mask)
    if m.dtype == bool:
        if m.shape != (n,):
            raise ShapeError("boolean mask must have one entry per row")
        return np.flatnonzero(m)
    return m.astype(np.int64).ravel()


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs a random generator")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    keep = keep.astype(x.data.dtype)
    return _record("dropout", (x,), x.data * keep, lambda G: (G * keep,))


def l2_penalty(params: Sequence[Tensor], lam: float) -> Tensor:
    """lam * Σ ||P||_F^2."""
    if lam < 0:
        raise ValueError("penalty weight must be non-negative")
    params = tuple(params)
    if not params:
        raise ValueError("l2_penalty needs at least one tensor")
    total = sum(float(np.sum(p.data * p.data)) for p in params)
    dtype = params[0].data.dtype
    return _record(
        "l2", params, np.array([[lam * total]], dtype=dtype),
        lambda G: tuple(2.0 * lam * G[0, 0] * p.data for p in params),
    )


# --------------------------------------------------------------------------- reverse sweep


class GradientMap(Mapping):
    """Gradients keyed by tensor identity."""

    def __init__(self):
        self._items: dict[int, tuple[Tensor, np.ndarray]] = {}

    def _set(self, t: Tensor, g: np.ndarray) -> None:
        self._items[id(t)] = (t, g)

    def __getitem__(self, t: Tensor) -> np.ndarray:
        return self._items[id(t)][1]

    def __contains__(self, t) -> bool:
        return isinstance(t, Tensor) and id(t) in self._items

    def __iter__(self):
        return (t for t, _ in self._items.values())

    def __len__(self) -> int:
        return len(self._items)


def backward(loss: Tensor) -> GradientMap:
    """Accumulate d(loss)/d(leaf) for every leaf on the tape with ``requires_grad``."""
    if loss.shape != (1, 1):
        raise ShapeError(f"backward needs a scalar root, got shape {loss.shape}")
    tape = loss.tape
    if tape is None:
        raise ValueError("loss is not on a tape")
    grads: list[np.ndarray | None] = [None] * len(tape.nodes)
    grads[loss.node_id] = np.ones((1, 1), dtype=loss.data.dtype)
    for idx in range(loss.node_id, -1, -1):
        node = tape.nodes[idx]
        g = grads[idx]
        if g is None or node.vjp is None:
            continue
        for inp, gi in zip(node.inputs, node.vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            j = tape.node_of(inp)
            grads[j] = gi.copy() if grads[j] is None else grads[j] + gi
    out = GradientMap()
    for idx, node in enumerate(tape.nodes):
        if node.op == "leaf" and node.out.requires_grad:
            g = grads[idx]
            out._set(node.out, np.zeros_like(node.out.data) if g is None else g)
    return out


def gradcheck(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``f(*inputs)`` must return a scalar tensor.  The error per coordinate is
    |a - n| / max(1, |a|, |n|).
    """
    inputs = list(inputs)
    grads = backward(f(*inputs))
    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = grads[t] if t in grads else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        an = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(*inputs).item()
            flat[i] = orig - h
            fm = f(*inputs).item()
            flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            err = abs(an[i] - num) / max(1.0, abs(an[i]), abs(num))
            worst = max(worst, err)
    return worst
