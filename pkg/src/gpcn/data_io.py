"""Dataset containers, file formats and synthetic graph generation.

Text format::

    N M C
    src dst            (M lines, one stored adjacency entry each)
    label              (N lines)
    x_1 x_2 ... x_q    (N lines)

Binary format (little-endian): magic ``PGCN``, a version byte, four
uint64 counts ``N M C q``, then ``M x 2`` int64 edge endpoints, ``N``
int64 labels and ``N x q`` float64 features, row-major.

Random streams come from numpy's Philox4x64 counter-based generator.
A seed is expanded with ``SeedSequence(seed).spawn(2)``: child 0 drives
edge sampling, child 1 drives features.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Literal

import numpy as np

from .errors import DataError, ParseError
from .graph import LabelVector, SparseAdjacency, build_csr

if TYPE_CHECKING:
    from .training import Split

Format = Literal["text", "binary"]

MAGIC = b"PGCN"
VERSION = 1
_HEADER = struct.Struct("<4sBQQQQ")


@dataclass(eq=False)
class GraphDataset:
    name: str
    A: SparseAdjacency
    X: np.ndarray
    y: LabelVector
    fixed_splits: list["Split"] = field(default_factory=list)

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        if self.X.ndim != 2:
            raise DataError("features must form a 2-D matrix")
        n = self.A.n_rows
        if self.A.n_cols != n:
            raise DataError("adjacency must be square")
        if self.X.shape[0] != n or len(self.y) != n:
            raise DataError(
                f"inconsistent node counts: adjacency {n}, features {self.X.shape[0]}, labels {len(self.y)}"
            )
        if not np.all(np.isfinite(self.X)):
            raise DataError("feature values must be finite")

    @property
    def n_nodes(self) -> int:
        return self.A.n_rows

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def n_classes(self) -> int:
        return self.y.num_classes

    def edge_array(self) -> np.ndarray:
        """Stored adjacency entries as an (nnz, 2) array in CSR order."""
        return np.column_stack([self.A.row_ids, self.A.col_indices])


def row_normalize(X: np.ndarray) -> np.ndarray:
    """Scale each feature row to unit L1 norm; all-zero rows stay zero."""
    s = np.abs(X).sum(axis=1, keepdims=True)
    return np.divide(X, s, out=np.zeros_like(X, dtype=np.float64), where=s > 0)


# --------------------------------------------------------------------------- text / binary


def save_dataset(ds: GraphDataset, path, format: Format = "text") -> None:
    path = Path(path)
    edges = ds.edge_array()
    if format == "binary":
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, VERSION, ds.n_nodes, edges.shape[0], ds.n_classes, ds.n_features))
            fh.write(edges.astype("<i8").tobytes())
            fh.write(ds.y.labels.astype("<i8").tobytes())
            fh.write(ds.X.astype("<f8").tobytes())
        return
    if format != "text":
        raise ValueError(f"unknown format {format!r}")
    with open(path, "w") as fh:
        fh.write(f"{ds.n_nodes} {edges.shape[0]} {ds.n_classes}\n")
        for s, d in edges:
            fh.write(f"{s} {d}\n")
        for lab in ds.y.labels:
            fh.write(f"{lab}\n")
        for row in ds.X:
            fh.write(" ".join(repr(float(v)) for v in row))
            fh.write("\n")


def load_dataset(path, format: Format | None = None, name: str | None = None, directed: bool = True) -> GraphDataset:
    """Read a dataset; ``format=None`` sniffs the binary magic.

    Edges are taken as stored entries (``directed=True``), which makes
    save/load an exact round trip.  Pass ``directed=False`` for files that
    list each undirected edge once.
    """
    path = Path(path)
    if format is None:
        with open(path, "rb") as fh:
            format = "binary" if fh.read(4) == MAGIC else "text"
    name = name or path.stem
    if format == "binary":
        return _load_binary(path, name, directed)
    if format != "text":
        raise ValueError(f"unknown format {format!r}")
    return _load_text(path, name, directed)


def _load_text(path: Path, name: str, directed: bool) -> GraphDataset:
    with open(path) as fh:
        lines = fh.read().splitlines()
    src = str(path)

    def line(i: int) -> str:
        if i >= len(lines):
            raise ParseError("unexpected end of file", i + 1, src)
        return lines[i]

    head = line(0).split()
    if len(head) != 3:
        raise ParseError("header must be 'N M C'", 1, src)
    try:
        n, m, c = (int(t) for t in head)
    except ValueError:
        raise ParseError("header fields must be integers", 1, src) from None
    if n <= 0 or m < 0 or c <= 0:
        raise ParseError("header counts out of range", 1, src)

    edges = np.empty((m, 2), dtype=np.int64)
    for k in range(m):
        i = 1 + k
        parts = line(i).split()
        if len(parts) != 2:
            raise ParseError("edge line must be 'src dst'", i + 1, src)
        try:
            s, d = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError("edge endpoints must be integers", i + 1, src) from None
        if not (0 <= s < n and 0 <= d < n):
            raise ParseError(f"edge endpoint outside [0, {n})", i + 1, src)
        edges[k] = (s, d)

    labels = np.empty(n, dtype=np.int64)
    for k in range(n):
        i = 1 + m + k
        tok = line(i).strip()
        try:
            labels[k] = int(tok)
        except ValueError:
            raise ParseError("label must be an integer", i + 1, src) from None
        if not 0 <= labels[k] < c:
            raise ParseError(f"label {labels[k]} outside [0, {c})", i + 1, src)

    rows = []
    q = None
    for k in range(n):
        i = 1 + m + n + k
        parts = line(i).split()
        if q is None:
            q = len(parts)
            if q == 0:
                raise ParseError("feature row is empty", i + 1, src)
        if len(parts) != q:
            raise ParseError(f"expected {q} feature values, found {len(parts)}", i + 1, src)
        try:
            rows.append([float(t) for t in parts])
        except ValueError:
            raise ParseError("feature values must be real numbers", i + 1, src) from None
    extra = [j for j in range(1 + m + 2 * n, len(lines)) if lines[j].strip()]
    if extra:
        raise ParseError("trailing content after feature rows", extra[0] + 1, src)
    X = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(X)):
        raise ParseError("feature values must be finite", None, src)
    return GraphDataset(name, build_csr(edges, n, directed=directed), X, LabelVector(labels, c))


def _load_binary(path: Path, name: str, directed: bool) -> GraphDataset:
    blob = path.read_bytes()
    src = str(path)
    if len(blob) < _HEADER.size:
        raise ParseError("truncated header", None, src)
    magic, version, n, m, c, q = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise ParseError("bad magic; not a PGCN file", None, src)
    if version != VERSION:
        raise ParseError(f"unsupported version {version}", None, src)
    need = _HEADER.size + 8 * (2 * m + n + n * q)
    if len(blob) != need:
        raise ParseError(f"payload size {len(blob)} does not match header (expected {need})", None, src)
    off = _HEADER.size
    edges = np.frombuffer(blob, "<i8", 2 * m, off).reshape(m, 2).astype(np.int64)
    off += 16 * m
    labels = np.frombuffer(blob, "<i8", n, off).astype(np.int64)
    off += 8 * n
    X = np.frombuffer(blob, "<f8", n * q, off).reshape(n, q).astype(np.float64)
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        raise ParseError("edge endpoint out of range", None, src)
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ParseError("label out of range", None, src)
    return GraphDataset(name, build_csr(edges, n, directed=directed), X, LabelVector(labels, int(c)))


# --------------------------------------------------------------------------- external layouts


def _numeric_rows(path: Path, sep_chars: str = ","):
    out = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            s = raw.strip()
            if not s:
                continue
            for ch in sep_chars:
                s = s.replace(ch, " ")
            parts = s.split()
            try:
                out.append((lineno, [float(p) for p in parts]))
            except ValueError:
                if not out:  # header line
                    continue
                raise ParseError("non-numeric value", lineno, str(path)) from None
    return out


def import_external(edges_path, features_path, labels_path, name: str | None = None, directed: bool = True) -> GraphDataset:
    """Assemble a dataset from a tab-separated edge list plus feature and label files.

    A leading non-numeric line in any file is treated as a header.
    """
    edges_path, features_path, labels_path = map(Path, (edges_path, features_path, labels_path))
    feat_rows = _numeric_rows(features_path)
    lab_rows = _numeric_rows(labels_path)
    if not feat_rows:
        raise DataError(f"{features_path}: no feature rows")
    n = len(feat_rows)
    if len(lab_rows) != n:
        raise DataError(f"node count mismatch: {n} feature rows but {len(lab_rows)} labels")
    q = len(feat_rows[0][1])
    for lineno, r in feat_rows:
        if len(r) != q:
            raise ParseError(f"expected {q} feature values, found {len(r)}", lineno, str(features_path))
    labels = []
    for lineno, r in lab_rows:
        if len(r) != 1 or r[0] != int(r[0]) or r[0] < 0:
            raise ParseError("label must be a single non-negative integer", lineno, str(labels_path))
        labels.append(int(r[0]))
    edges = []
    for lineno, r in _numeric_rows(edges_path, sep_chars="\t,"):
        if len(r) != 2:
            raise ParseError("edge line must be 'src<TAB>dst'", lineno, str(edges_path))
        s, d = int(r[0]), int(r[1])
        if not (0 <= s < n and 0 <= d < n):
            raise DataError(f"{edges_path}:{lineno}: endpoint outside the {n} nodes of the feature file")
        edges.append((s, d))
    X = np.array([r for _, r in feat_rows], dtype=np.float64)
    y = LabelVector.of(labels)
    return GraphDataset(name or edges_path.stem, build_csr(np.array(edges, dtype=np.int64).reshape(-1, 2), n, directed), X, y)


def load_splits(path, n_nodes: int) -> list["Split"]:
    """Fixed splits from an ``.npz`` with ``train_mask``, ``val_mask``, ``test_mask``.

    Masks are boolean, either length N (one split) or N x S (S splits).
    """
    from .training import Split

    with np.load(path) as z:
        try:
            masks = [np.asarray(z[k]) for k in ("train_mask", "val_mask", "test_mask")]
        except KeyError as e:
            raise DataError(f"{path}: missing array {e}") from None
    for m in masks:
        if m.shape[0] != n_nodes:
            raise DataError(f"{path}: mask length {m.shape[0]} does not match {n_nodes} nodes")
    if masks[0].ndim == 1:
        masks = [m[:, None] for m in masks]
    splits = []
    for s in range(masks[0].shape[1]):
        tr, va, te = (np.flatnonzero(m[:, s].astype(bool)) for m in masks)
        splits.append(Split(tr, va, te, seed=s, protocol="fixed_file", n=n_nodes))
    return splits


# --------------------------------------------------------------------------- synthetic


@dataclass(frozen=True)
class SyntheticSpec:
    n: int = 400
    classes: int = 2
    p_in: float = 0.05
    p_out: float = 0.005
    feature_dim: int = 16
    feature_separation: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.p_in <= 1.0 and 0.0 <= self.p_out <= 1.0):
            raise ValueError("edge probabilities must lie in [0, 1]")
        if self.classes < 1 or self.n < self.classes:
            raise ValueError("need n >= classes >= 1")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be positive")
        if self.feature_dim < self.classes and self.classes != 2:
            raise ValueError("feature_dim must be at least the number of classes")
        if self.feature_separation < 0:
            raise ValueError("feature_separation must be non-negative")


def philox_streams(seed: int, n: int = 2) -> list[np.random.Generator]:
    return [np.random.Generator(np.random.Philox(s)) for s in np.random.SeedSequence(seed).spawn(n)]


def class_means(classes: int, dim: int, separation: float) -> np.ndarray:
    """Class centres with every pairwise distance equal to ``separation``."""
    mu = np.zeros((classes, dim))
    if dim >= classes:
        mu[np.arange(classes), np.arange(classes)] = separation / np.sqrt(2.0)
    else:  # two classes on one axis
        mu[0, 0], mu[1, 0] = -separation / 2.0, separation / 2.0
    return mu


def generate_sbm(spec: SyntheticSpec, name: str | None = None) -> GraphDataset:
    """Stochastic block model with Gaussian class-mean features.

    Labels are contiguous balanced blocks.  Each unordered pair i < j is
    linked independently with ``p_in`` (same block) or ``p_out``; the
    uniforms are drawn row by row over the upper triangle.
    """
    n, C = spec.n, spec.classes
    labels = (np.arange(n, dtype=np.int64) * C) // n
    edge_rng, feat_rng = philox_streams(spec.seed)
    src_parts, dst_parts = [], []
    block = max(1, 2_000_000 // max(n, 1))
    for start in range(0, n - 1, block):
        rows = np.arange(start, min(start + block, n - 1))
        counts = n - 1 - rows
        u = edge_rng.random(int(counts.sum()))
        i = np.repeat(rows, counts)
        offs = np.arange(i.size) - np.repeat(np.cumsum(counts) - counts, counts)
        j = i + 1 + offs
        p = np.where(labels[i] == labels[j], spec.p_in, spec.p_out)
        keep = u < p
        src_parts.append(i[keep])
        dst_parts.append(j[keep])
    if src_parts:
        edges = np.column_stack([np.concatenate(src_parts), np.concatenate(dst_parts)])
    else:
        edges = np.zeros((0, 2), dtype=np.int64)
    means = class_means(C, spec.feature_dim, spec.feature_separation)
    X = means[labels] + feat_rng.standard_normal((n, spec.feature_dim))
    name = name or f"sbm_n{n}_c{C}_pin{spec.p_in}_pout{spec.p_out}_s{spec.seed}"
    return GraphDataset(name, build_csr(edges, n, directed=False), X, LabelVector(labels, C))
