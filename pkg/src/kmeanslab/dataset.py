"""Point sets: loading, synthetic generation, and summaries.

A :class:`Dataset` holds either a dense ``(n, d)`` float array or a CSR
matrix whose rows are sorted ``(index, value)`` pairs. Squared norms are
cached at construction. Both storage arrays are made read-only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp


class DatasetError(ValueError):
    """Raised for malformed input files or invalid dataset parameters."""


class Dataset:
    """Immutable collection of ``n`` points in ``R^d``.

    Parameters
    ----------
    X : ndarray of shape (n, d) or scipy sparse matrix
        Point coordinates. Sparse input is converted to canonical CSR
        (sorted, duplicate-free column indices per row).
    labels : sequence of str, optional
        Per-point metadata carried from input files. Never used by solvers.
    """

    def __init__(self, X, labels: Sequence[str] | None = None):
        if sp.issparse(X):
            X = sp.csr_matrix(X, dtype=np.float64, copy=True)
            X.sum_duplicates()
            X.sort_indices()
            X.data.flags.writeable = False
            X.indices.flags.writeable = False
            X.indptr.flags.writeable = False
            sq = np.asarray(X.multiply(X).sum(axis=1)).ravel()
        else:
            X = np.array(X, dtype=np.float64, copy=True)
            if X.ndim != 2:
                raise DatasetError(f"expected a 2-d array, got shape {X.shape}")
            X.flags.writeable = False
            sq = np.einsum("ij,ij->i", X, X)
        n, d = X.shape
        if n < 1:
            raise DatasetError("no points")
        if d < 1:
            raise DatasetError("dimension must be positive")
        if labels is not None and len(labels) != n:
            raise DatasetError("labels length does not match number of points")
        sq.flags.writeable = False
        self._X = X
        self._sq = sq
        self.labels = tuple(labels) if labels is not None else None

    @property
    def X(self):
        return self._X

    @property
    def n(self) -> int:
        return self._X.shape[0]

    @property
    def dim(self) -> int:
        return self._X.shape[1]

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self._X)

    @property
    def squared_norms(self) -> np.ndarray:
        return self._sq

    def __len__(self) -> int:
        return self.n

    def __repr__(self) -> str:
        kind = "sparse" if self.is_sparse else "dense"
        return f"Dataset(n={self.n}, d={self.dim}, {kind})"

    def point(self, i: int) -> np.ndarray:
        """Dense copy of point ``i``."""
        if self.is_sparse:
            return self._X[i].toarray().ravel()
        return self._X[i].copy()

    def sparse_point(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """``(indices, values)`` of the stored entries of point ``i``."""
        if self.is_sparse:
            lo, hi = self._X.indptr[i], self._X.indptr[i + 1]
            return self._X.indices[lo:hi].copy(), self._X.data[lo:hi].copy()
        row = self._X[i]
        nz = np.flatnonzero(row)
        return nz, row[nz]

    def rows(self, idx) -> np.ndarray:
        """Dense ``(len(idx), d)`` array of the selected points."""
        idx = np.asarray(idx, dtype=np.intp)
        if self.is_sparse:
            return self._X[idx].toarray()
        return self._X[idx]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        labels = [self.labels[i] for i in idx] if self.labels is not None else None
        return Dataset(self._X[idx], labels=labels)

    def dense(self) -> np.ndarray:
        if self.is_sparse:
            return self._X.toarray()
        return self._X

    def stored(self) -> int:
        """Number of stored coordinates (every entry, for dense storage)."""
        if self.is_sparse:
            return int(self._X.nnz)
        return self.n * self.dim

    def normalized(self) -> "Dataset":
        """Copy with every nonzero row scaled to unit L2 norm."""
        norms = np.sqrt(self._sq)
        scale = np.where(norms > 0, 1.0 / np.where(norms > 0, norms, 1.0), 1.0)
        if self.is_sparse:
            Y = sp.diags(scale) @ self._X
        else:
            Y = self._X * scale[:, None]
        return Dataset(Y, labels=self.labels)


# ---------------------------------------------------------------------------
# File formats


def _parse_svmlight(path: Path, dim: int | None) -> Dataset:
    data, indices, indptr, labels = [], [], [0], []
    max_idx = 0
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            label = ""
            if ":" not in tokens[0]:
                label = tokens[0]
                tokens = tokens[1:]
            row: dict[int, float] = {}
            for tok in tokens:
                key, sep, val = tok.partition(":")
                if not sep:
                    raise DatasetError(f"{path}:{lineno}: malformed feature {tok!r}")
                try:
                    j = int(key)
                    v = float(val)
                except ValueError:
                    raise DatasetError(
                        f"{path}:{lineno}: malformed feature {tok!r}"
                    ) from None
                if j < 1:
                    raise DatasetError(
                        f"{path}:{lineno}: feature index {j} is not 1-based"
                    )
                if j - 1 in row:
                    raise DatasetError(f"{path}:{lineno}: duplicate feature index {j}")
                row[j - 1] = v
                max_idx = max(max_idx, j)
            for j in sorted(row):
                indices.append(j)
                data.append(row[j])
            indptr.append(len(indices))
            labels.append(label)
    if not labels:
        raise DatasetError(f"{path}: no points")
    if dim is None:
        dim = max(max_idx, 1)
    elif dim < max_idx:
        raise DatasetError(
            f"{path}: dimension override {dim} is smaller than max feature index {max_idx}"
        )
    X = sp.csr_matrix(
        (np.array(data, dtype=np.float64), np.array(indices, dtype=np.int64), indptr),
        shape=(len(labels), dim),
    )
    return Dataset(X, labels=labels)


def _parse_csv(path: Path, dim: int | None) -> Dataset:
    rows = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                rows.append([float(tok) for tok in line.split(",")])
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: cannot parse {line!r}") from None
            if len(rows[-1]) != len(rows[0]):
                raise DatasetError(
                    f"{path}:{lineno}: expected {len(rows[0])} columns, got {len(rows[-1])}"
                )
    if not rows:
        raise DatasetError(f"{path}: no points")
    X = np.array(rows, dtype=np.float64)
    if dim is not None:
        if dim < X.shape[1]:
            raise DatasetError(
                f"{path}: dimension override {dim} is smaller than {X.shape[1]} columns"
            )
        X = np.hstack([X, np.zeros((X.shape[0], dim - X.shape[1]))])
    return Dataset(X)


def load_sparse(path, format: str = "svmlight", dim: int | None = None) -> Dataset:
    """Load a dataset from an svmlight-like or dense CSV file.

    svmlight lines are ``<label> <idx>:<val> ...`` with 1-based indices; the
    label is optional. ``d`` defaults to the largest index seen.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if format in ("svmlight", "libsvm", "svm"):
        return _parse_svmlight(path, dim)
    if format in ("csv", "csv-dense", "dense"):
        return _parse_csv(path, dim)
    raise DatasetError(f"unknown format {format!r}")


def guess_format(path) -> str:
    suffix = Path(path).suffix.lower()
    return "csv" if suffix in (".csv", ".txt") else "svmlight"


def write_sparse(ds: Dataset, path) -> None:
    """Write ``ds`` in svmlight-like format (1-based indices, repr floats)."""
    with open(path, "w") as fh:
        for i in range(ds.n):
            idx, val = ds.sparse_point(i)
            label = ds.labels[i] if ds.labels is not None and ds.labels[i] else "0"
            feats = " ".join(f"{j + 1}:{v!r}" for j, v in zip(idx.tolist(), val.tolist()))
            fh.write(f"{label} {feats}".rstrip() + "\n")


def write_csv(ds: Dataset, path) -> None:
    X = ds.dense()
    with open(path, "w") as fh:
        for row in X:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


# ---------------------------------------------------------------------------
# Synthetic instances


@dataclass(frozen=True)
class SyntheticSpec:
    """Uniform-in-ball mixture. One ball per cluster, all sharing ``radius``."""

    centers: tuple[tuple[float, ...], ...]
    sizes: tuple[int, ...]
    radius: float
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "centers", tuple(tuple(float(v) for v in c) for c in self.centers))
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if not self.centers:
            raise DatasetError("at least one center is required")
        if len(self.sizes) != len(self.centers):
            raise DatasetError("sizes and centers must have the same length")
        if any(s < 1 for s in self.sizes):
            raise DatasetError("every cluster size must be >= 1")
        if len({len(c) for c in self.centers}) != 1 or len(self.centers[0]) < 1:
            raise DatasetError("centers must share a positive dimension")
        if len(set(self.centers)) != len(self.centers):
            raise DatasetError("centers must be pairwise distinct")
        if not self.radius >= 0:
            raise DatasetError("radius must be nonnegative")

    @property
    def k(self) -> int:
        return len(self.centers)

    @property
    def dim(self) -> int:
        return len(self.centers[0])


def simplex_centers(k: int, dim: int, separation: float) -> tuple[tuple[float, ...], ...]:
    """``k`` points with all pairwise distances equal to ``separation``.

    Uses scaled standard basis vectors recentred at the origin, so
    ``dim >= k`` is required.
    """
    if dim < k:
        raise DatasetError(f"simplex layout needs dim >= k (got dim={dim}, k={k})")
    E = np.zeros((k, dim))
    E[np.arange(k), np.arange(k)] = separation / math.sqrt(2.0)
    E -= E.mean(axis=0)
    return tuple(tuple(row) for row in E)


def generate_clusterable(spec: SyntheticSpec):
    """Draw points uniformly from a ball around each planted center.

    Returns ``(dataset, planted_centroids, planted_clustering)``. The planted
    centroids are the ball centers, not the sample means.
    """
    from .core import Centroids, Clustering

    rng = np.random.default_rng(spec.seed)
    d = spec.dim
    blocks = []
    for c, size in zip(spec.centers, spec.sizes):
        g = rng.standard_normal((size, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        r = spec.radius * rng.random(size) ** (1.0 / d)
        blocks.append(np.asarray(c) + g * r[:, None])
    X = np.vstack(blocks)
    assignment = np.repeat(np.arange(spec.k), spec.sizes)
    return (
        Dataset(X),
        Centroids(np.array(spec.centers)),
        Clustering.from_assignment(assignment, spec.k),
    )


@dataclass
class DatasetSummary:
    n: int
    dim: int
    density: float
    bbox_diagonal: float
    sparse: bool = field(default=False)


def describe(ds: Dataset) -> DatasetSummary:
    if ds.is_sparse:
        hi = ds.X.max(axis=0).toarray().ravel()
        lo = ds.X.min(axis=0).toarray().ravel()
    else:
        hi = ds.X.max(axis=0)
        lo = ds.X.min(axis=0)
    diag = float(np.sqrt(np.sum((hi - lo) ** 2)))
    return DatasetSummary(
        n=ds.n,
        dim=ds.dim,
        density=ds.stored() / (ds.n * ds.dim),
        bbox_diagonal=diag,
        sparse=ds.is_sparse,
    )
