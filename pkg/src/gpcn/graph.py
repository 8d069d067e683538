"""Sparse graph representation, adjacency normalization, homophily and spectra.

Matrices are held in CSR form with sorted, duplicate-free column indices.
Products are delegated to ``scipy.sparse`` whose CSR kernels walk rows in
storage order, so repeated products are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Literal, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import (
    DegenerateClassError,
    DegenerateDegreeError,
    InsufficientSpectrumError,
    OutOfRangeError,
    ShapeError,
    SizeError,
    SymmetryError,
    UndefinedMeasureError,
)

Symmetrize = Literal["auto", "force", "never"]

DENSE_SPECTRUM_LIMIT = 10_000
# Entrywise symmetry is verified up to this order; above it the hint is trusted.
SYMMETRY_CHECK_LIMIT = 5_000
SYMMETRY_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class SparseAdjacency:
    """Immutable CSR matrix.

    ``row_offsets`` has length ``n_rows + 1``; column indices are strictly
    increasing within each row.  ``symmetric_hint`` records whether the
    matrix is known to be symmetric.
    """

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray
    symmetric_hint: bool = False

    def __post_init__(self):
        ro = np.ascontiguousarray(self.row_offsets, dtype=np.int64)
        ci = np.ascontiguousarray(self.col_indices, dtype=np.int64)
        vals = np.ascontiguousarray(self.values)
        if vals.dtype.kind != "f":
            vals = vals.astype(np.float64)
        if ro.shape != (self.n_rows + 1,):
            raise ShapeError(f"row_offsets must have length {self.n_rows + 1}, got {ro.shape}")
        if ro[0] != 0 or np.any(np.diff(ro) < 0):
            raise ShapeError("row_offsets must start at 0 and be non-decreasing")
        if not (ro[-1] == ci.size == vals.size):
            raise ShapeError("row_offsets[-1], len(col_indices) and len(values) disagree")
        if ci.size:
            if ci.min() < 0 or ci.max() >= self.n_cols:
                raise OutOfRangeError("column index outside [0, n_cols)")
            # strictly increasing within rows: every step inside a row is positive
            steps = np.diff(ci)
            row_start = np.zeros(ci.size, dtype=bool)
            row_start[ro[:-1][np.diff(ro) > 0]] = True
            if np.any((steps <= 0) & ~row_start[1:]):
                raise ShapeError("column indices must be strictly increasing within each row")
        if not np.all(np.isfinite(vals)):
            raise ValueError("sparse values must be finite")
        for arr in (ro, ci, vals):
            arr.setflags(write=False)
        object.__setattr__(self, "row_offsets", ro)
        object.__setattr__(self, "col_indices", ci)
        object.__setattr__(self, "values", vals)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return int(self.col_indices.size)

    @property
    def dtype(self):
        return self.values.dtype

    @cached_property
    def csr(self) -> sp.csr_matrix:
        m = sp.csr_matrix(
            (self.values, self.col_indices, self.row_offsets), shape=self.shape, copy=False
        )
        m.has_sorted_indices = True
        return m

    @cached_property
    def csr_t(self) -> sp.csr_matrix:
        return self.csr.T.tocsr()

    @cached_property
    def row_ids(self) -> np.ndarray:
        """Row index of every stored entry."""
        return np.repeat(np.arange(self.n_rows, dtype=np.int64), np.diff(self.row_offsets))

    def to_dense(self) -> np.ndarray:
        return self.csr.toarray()

    def astype(self, dtype) -> "SparseAdjacency":
        return SparseAdjacency(
            self.n_rows, self.n_cols, self.row_offsets, self.col_indices,
            self.values.astype(dtype), self.symmetric_hint,
        )

    def transpose(self) -> "SparseAdjacency":
        return from_scipy(self.csr_t, symmetric_hint=self.symmetric_hint)

    def is_structurally_symmetric(self, tol: float = 0.0) -> bool:
        if self.n_rows != self.n_cols:
            return False
        diff = (self.csr - self.csr_t).tocoo()
        return bool(diff.nnz == 0 or np.max(np.abs(diff.data)) <= tol)

    @classmethod
    def from_dense(cls, dense, symmetric_hint: bool | None = None) -> "SparseAdjacency":
        dense = np.asarray(dense, dtype=np.float64)
        if dense.ndim != 2:
            raise ShapeError("expected a 2-D array")
        out = from_scipy(sp.csr_matrix(dense))
        if symmetric_hint is None:
            symmetric_hint = dense.shape[0] == dense.shape[1] and np.array_equal(dense, dense.T)
        return out._with_hint(symmetric_hint)

    def _with_hint(self, hint: bool) -> "SparseAdjacency":
        return SparseAdjacency(
            self.n_rows, self.n_cols, self.row_offsets, self.col_indices, self.values, bool(hint)
        )


def from_scipy(m, symmetric_hint: bool = False) -> SparseAdjacency:
    m = sp.csr_matrix(m, copy=True)
    m.sum_duplicates()
    m.eliminate_zeros()
    m.sort_indices()
    return SparseAdjacency(
        m.shape[0], m.shape[1], m.indptr, m.indices, m.data, symmetric_hint
    )


@dataclass(frozen=True, eq=False)
class LabelVector:
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        lab = np.ascontiguousarray(self.labels, dtype=np.int64)
        if lab.ndim != 1 or lab.size == 0:
            raise ValueError("labels must be a non-empty 1-D sequence")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if lab.min() < 0 or lab.max() >= self.num_classes:
            raise OutOfRangeError(f"labels must lie in [0, {self.num_classes})")
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)

    def __len__(self) -> int:
        return int(self.labels.size)

    @classmethod
    def of(cls, labels, num_classes: int | None = None) -> "LabelVector":
        labels = np.asarray(labels, dtype=np.int64)
        if num_classes is None:
            num_classes = int(labels.max()) + 1
        return cls(labels, num_classes)

    def class_sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


def _as_labels(y) -> LabelVector:
    return y if isinstance(y, LabelVector) else LabelVector.of(y)


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues sorted in descending order.

    ``n`` is the order of the matrix; the spectrum is full when
    ``n_computed == n``.
    """

    eigenvalues: np.ndarray
    method: str
    n_computed: int
    n: int

    @property
    def is_full(self) -> bool:
        return self.n_computed == self.n


# --------------------------------------------------------------------------- builders


def build_csr(edges: Iterable[Sequence[int]] | np.ndarray, n: int, directed: bool = False) -> SparseAdjacency:
    """Binary adjacency from an edge list; duplicates collapse to one entry."""
    e = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
    if e.size == 0:
        e = e.reshape(0, 2)
    if e.ndim != 2 or e.shape[1] != 2:
        raise ShapeError("edges must be a sequence of (src, dst) pairs")
    if e.size and (e.min() < 0 or e.max() >= n):
        bad = e[(e < 0).any(axis=1) | (e >= n).any(axis=1)][0]
        raise OutOfRangeError(f"edge ({bad[0]}, {bad[1]}) has an endpoint outside [0, {n})")
    src, dst = e[:, 0], e[:, 1]
    if not directed:
        src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])
    key = np.unique(src * n + dst)
    rows, cols = np.divmod(key, n) if n else (key, key)
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=offsets[1:])
    a = SparseAdjacency(n, n, offsets, cols, np.ones(key.size), symmetric_hint=not directed)
    if directed:
        a = a._with_hint(a.is_structurally_symmetric())
    return a


def add_self_loops(a: SparseAdjacency) -> SparseAdjacency:
    if a.n_rows != a.n_cols:
        raise ShapeError(f"self loops need a square matrix, got {a.shape}")
    m = a.csr + sp.identity(a.n_rows, dtype=a.dtype, format="csr")
    return from_scipy(m, symmetric_hint=a.symmetric_hint)


def normalize_sym(a_hat: SparseAdjacency, symmetrize: Symmetrize = "auto") -> SparseAdjacency:
    """D^{-1/2} Â D^{-1/2} with degrees taken as row sums.

    When the input is not known to be symmetric (``auto``) or on ``force``,
    the operator is built from ``Â + Âᵀ`` instead, which leaves an already
    symmetric input unchanged.
    """
    if a_hat.n_rows != a_hat.n_cols:
        raise ShapeError(f"normalization needs a square matrix, got {a_hat.shape}")
    if symmetrize not in ("auto", "force", "never"):
        raise ValueError(f"unknown symmetrize mode {symmetrize!r}")
    m = a_hat.csr
    hint = a_hat.symmetric_hint
    if symmetrize == "force" or (symmetrize == "auto" and not hint):
        m = m + a_hat.csr_t
        hint = True
    m = sp.csr_matrix(m)
    m.sort_indices()
    deg = np.asarray(m.sum(axis=1)).ravel()
    if np.any(deg <= 0):
        row = int(np.flatnonzero(deg <= 0)[0])
        raise DegenerateDegreeError(f"row {row} has non-positive degree; add self loops first")
    coo = m.tocoo()
    vals = coo.data / np.sqrt(deg[coo.row] * deg[coo.col])
    out = sp.csr_matrix((vals, (coo.row, coo.col)), shape=m.shape)
    return from_scipy(out, symmetric_hint=hint)


def normalized_adjacency(a: SparseAdjacency, symmetrize: Symmetrize = "auto") -> SparseAdjacency:
    """Ã = D̂^{-1/2}(A + I)D̂^{-1/2}."""
    return normalize_sym(add_self_loops(a), symmetrize)


def spmm(s: SparseAdjacency, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 2:
        raise ShapeError("spmm expects a 2-D dense operand")
    if s.n_cols != x.shape[0]:
        raise ShapeError(f"cannot multiply {s.shape} by {x.shape}")
    return np.asarray(s.csr @ x)


# --------------------------------------------------------------------------- homophily


def edge_homophily(a: SparseAdjacency, y) -> float:
    """Fraction of stored entries whose endpoints share a label."""
    y = _as_labels(y)
    if len(y) != a.n_rows:
        raise ShapeError("label count does not match adjacency")
    if a.nnz == 0:
        raise UndefinedMeasureError("edge homophily is undefined on an empty edge set")
    lab = y.labels
    same = lab[a.row_ids] == lab[a.col_indices]
    return float(np.count_nonzero(same) / a.nnz)


def class_homophily(a: SparseAdjacency, y) -> float:
    """Class-imbalance corrected homophily.

    h_k is the share of same-label neighbours among all neighbour slots of
    class-k nodes; the score sums the excess of h_k over the class fraction.
    """
    y = _as_labels(y)
    if len(y) != a.n_rows:
        raise ShapeError("label count does not match adjacency")
    if a.nnz == 0:
        raise UndefinedMeasureError("class homophily is undefined on an empty edge set")
    C = y.num_classes
    if C < 2:
        raise DegenerateClassError("class homophily needs at least two classes")
    lab = y.labels
    sizes = y.class_sizes()
    if np.any(sizes == 0):
        raise DegenerateClassError(f"class {int(np.flatnonzero(sizes == 0)[0])} is empty")
    same = (lab[a.row_ids] == lab[a.col_indices]).astype(np.float64)
    row_class = lab[a.row_ids]
    total = np.bincount(row_class, minlength=C).astype(np.float64)
    same_total = np.bincount(row_class, weights=same, minlength=C)
    if np.any(total == 0):
        raise DegenerateClassError(f"class {int(np.flatnonzero(total == 0)[0])} has zero total degree")
    h = same_total / total
    excess = np.maximum(h - sizes / lab.size, 0.0)
    return float(excess.sum() / (C - 1))


# --------------------------------------------------------------------------- spectra


def check_symmetric(a: SparseAdjacency, tol: float = SYMMETRY_TOL) -> None:
    if a.n_rows != a.n_cols:
        raise SymmetryError(f"matrix of shape {a.shape} is not square")
    if a.n_rows <= SYMMETRY_CHECK_LIMIT:
        if not a.is_structurally_symmetric(tol):
            raise SymmetryError("matrix is not symmetric")
    elif not a.symmetric_hint:
        raise SymmetryError("large matrix is not marked symmetric")


def lanczos(
    op,
    n: int,
    k: int,
    which: str = "LA",
    tol: float = 1e-10,
    max_iter: int | None = None,
    seed: int = 0,
) -> np.ndarray:
    """k extremal eigenvalues of a symmetric operator by Lanczos iteration.

    ``op`` maps a length-n vector to its product with the matrix.  Every new
    Lanczos vector is orthogonalized twice against all previous ones, and
    on breakdown the iteration restarts from a fresh random direction in
    the orthogonal complement.  ``which`` selects ``LA`` (largest),
    ``SA`` (smallest) or ``LM`` (largest magnitude).
    """
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}]")
    rng = np.random.Generator(np.random.Philox(seed))
    max_iter = n if max_iter is None else min(max_iter, n)
    Q = np.zeros((n, max_iter))
    alphas: list[float] = []
    betas: list[float] = []
    q = rng.standard_normal(n)
    q /= np.linalg.norm(q)
    beta = 0.0
    q_prev = np.zeros(n)
    ritz = np.zeros(0)
    for j in range(max_iter):
        Q[:, j] = q
        w = op(q) - beta * q_prev
        alpha = float(q @ w)
        w -= alpha * q
        for _ in range(2):
            w -= Q[:, : j + 1] @ (Q[:, : j + 1].T @ w)
        alphas.append(alpha)
        beta = float(np.linalg.norm(w))
        m = j + 1
        T = np.diag(alphas) + np.diag(betas, 1) + np.diag(betas, -1)
        theta, S = np.linalg.eigh(T)
        if m >= k:
            idx = _select(theta, k, which)
            ritz = theta[idx]
            resid = np.abs(beta * S[-1, idx])
            if m == n or np.all(resid <= tol * np.maximum(1.0, np.abs(ritz))):
                if m == n or beta > 1e-12 * max(1.0, np.abs(theta).max()):
                    break
        if m == max_iter:
            break
        q_prev = q
        if beta <= 1e-12 * max(1.0, np.abs(theta).max()):
            # invariant subspace found; continue in its orthogonal complement
            r = rng.standard_normal(n)
            for _ in range(2):
                r -= Q[:, :m] @ (Q[:, :m].T @ r)
            q = r / np.linalg.norm(r)
            beta = 0.0
        else:
            q = w / beta
        betas.append(beta)
    return np.sort(ritz)[::-1]


def _select(theta: np.ndarray, k: int, which: str) -> np.ndarray:
    if which == "LA":
        return np.argsort(theta)[::-1][:k]
    if which == "SA":
        return np.argsort(theta)[:k]
    if which == "LM":
        return np.argsort(-np.abs(theta), kind="stable")[:k]
    raise ValueError(f"unknown eigenvalue selector {which!r}")


def spectrum(
    a_tilde: SparseAdjacency,
    k: int | Literal["all"] = "all",
    which: str = "LA",
    tol: float = 1e-10,
    seed: int = 0,
) -> Spectrum:
    """Eigenvalues of a symmetric sparse matrix, descending.

    ``k="all"`` runs a dense symmetric eigensolver; an integer ``k`` runs
    Lanczos for the ``k`` extremal eigenvalues selected by ``which``.
    """
    check_symmetric(a_tilde)
    n = a_tilde.n_rows
    if isinstance(k, str):
        if k.lower() != "all":
            raise ValueError(f"k must be an integer or 'all', got {k!r}")
        if n > DENSE_SPECTRUM_LIMIT:
            raise SizeError(f"full spectrum limited to N <= {DENSE_SPECTRUM_LIMIT}, got {n}")
        dense = a_tilde.to_dense().astype(np.float64)
        dense = 0.5 * (dense + dense.T)
        vals = np.linalg.eigvalsh(dense)[::-1].copy()
        return Spectrum(vals, "dense", n, n)
    k = int(k)
    csr = a_tilde.csr.astype(np.float64)
    vals = lanczos(lambda v: csr @ v, n, k, which=which, tol=tol, seed=seed)
    return Spectrum(vals, "lanczos", int(vals.size), n)


def spectral_power_sum(s: Spectrum, k: float) -> float:
    """Σ_j |λ_j|^k over the full spectrum."""
    if not s.is_full:
        raise InsufficientSpectrumError(
            f"power sums need the full spectrum ({s.n_computed} of {s.n} eigenvalues computed)"
        )
    if k < 1:
        raise ValueError("exponent must be >= 1")
    return float(np.sum(np.abs(s.eigenvalues) ** k))
