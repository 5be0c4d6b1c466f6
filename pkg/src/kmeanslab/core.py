"""Voronoi assignment, means, k-means cost and the centroidal distance.

Conventions
-----------
* Centers live in a dense ``(k, d)`` array. A center whose ``active`` flag is
  false is degenerate: it receives no points and is never moved.
* Assignment ties go to the lowest center index.
* ``delta(Cp, C, weights)`` is the asymmetric distance
  ``min_pi sum_r n_r ||Cp[pi(r)] - C[r]||^2`` where ``pi`` maps the active
  centers of ``C`` injectively into the active centers of ``Cp``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .dataset import Dataset

NONE = -1
EXACT_DELTA_MAX_K = 64
_CHUNK = 1 << 22  # floats per temporary (n_chunk * k * d) block


class KMeansError(ValueError):
    pass


@dataclass
class Centroids:
    """``k`` centers with per-center activity flags."""

    centers: np.ndarray
    active: np.ndarray = None

    def __post_init__(self):
        self.centers = np.array(self.centers, dtype=np.float64, ndmin=2)
        if self.centers.ndim != 2 or self.centers.shape[0] < 1:
            raise KMeansError("centroids need shape (k, d) with k >= 1")
        if self.active is None:
            self.active = np.ones(self.k, dtype=bool)
        else:
            self.active = np.array(self.active, dtype=bool)
            if self.active.shape != (self.k,):
                raise KMeansError("active flags must have length k")

    @property
    def k(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    @property
    def n_active(self) -> int:
        return int(self.active.sum())

    def copy(self) -> "Centroids":
        return Centroids(self.centers.copy(), self.active.copy())

    def equals(self, other: "Centroids") -> bool:
        return (
            self.centers.shape == other.centers.shape
            and np.array_equal(self.centers, other.centers)
            and np.array_equal(self.active, other.active)
        )

    def digest(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.centers).tobytes())
        h.update(self.active.tobytes())
        return h.hexdigest()[:16]


@dataclass
class Clustering:
    """Partition of point indices into at most ``k`` clusters."""

    assignment: np.ndarray
    k: int
    sizes: np.ndarray = field(init=False)

    def __post_init__(self):
        self.assignment = np.asarray(self.assignment, dtype=np.int64)
        if self.k < 1:
            raise KMeansError("k must be >= 1")
        if self.assignment.size and (
            self.assignment.max() >= self.k or self.assignment.min() < NONE
        ):
            raise KMeansError("cluster ids must lie in [0, k) or be NONE")
        assigned = self.assignment[self.assignment != NONE]
        self.sizes = np.bincount(assigned, minlength=self.k)

    @classmethod
    def from_assignment(cls, assignment, k: int | None = None) -> "Clustering":
        assignment = np.asarray(assignment, dtype=np.int64)
        if k is None:
            k = int(assignment.max()) + 1
        return cls(assignment, k)

    @classmethod
    def from_groups(cls, groups, n: int, k: int | None = None) -> "Clustering":
        labels = np.full(n, NONE, dtype=np.int64)
        for r, members in enumerate(groups):
            labels[list(members)] = r
        return cls(labels, k if k is not None else max(len(groups), 1))

    @property
    def n(self) -> int:
        return self.assignment.size

    @property
    def n_clusters(self) -> int:
        """Number of nonempty clusters (``k'``)."""
        return int(np.count_nonzero(self.sizes))

    def members(self, r: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == r)

    def canonical(self) -> tuple[tuple[int, ...], ...]:
        """Label-free form: sorted tuple of sorted member tuples."""
        groups = [tuple(self.members(r).tolist()) for r in range(self.k) if self.sizes[r]]
        return tuple(sorted(groups))

    def same_partition(self, other: "Clustering") -> bool:
        return self.n == other.n and self.canonical() == other.canonical()


@dataclass
class CostReport:
    total: float
    per_cluster: np.ndarray


@dataclass
class DeltaResult:
    value: float
    permutation: np.ndarray  # target cluster r -> source center index (NONE if skipped)
    method: str


# ---------------------------------------------------------------------------
# distances


def _dense_sq_dist(X: np.ndarray, centers: np.ndarray) -> np.ndarray:
    n, d = X.shape
    k = centers.shape[0]
    out = np.empty((n, k))
    # one center at a time keeps the temporary at (rows, d)
    step = max(1, _CHUNK // max(1, d))
    for lo in range(0, n, step):
        block = X[lo : lo + step]
        for j in range(k):
            diff = block - centers[j]
            out[lo : lo + step, j] = np.einsum("ij,ij->i", diff, diff)
    return out


def squared_distances(ds: Dataset, centers: np.ndarray, idx=None, method: str = "auto") -> np.ndarray:
    """``(n_sel, k)`` squared distances from selected points to every center.

    ``method`` is ``"naive"`` (explicit differences), ``"expansion"``
    (``|x|^2 - 2<x,c> + |c|^2`` with cached norms, clipped at 0) or ``"auto"``,
    which picks the expansion for sparse storage and differences otherwise.
    """
    if method == "auto":
        method = "expansion" if ds.is_sparse else "naive"
    if method == "naive":
        X = ds.dense() if idx is None else ds.rows(idx)
        return _dense_sq_dist(X, centers)
    if method != "expansion":
        raise KMeansError(f"unknown distance method {method!r}")
    if idx is None:
        X, sq = ds.X, ds.squared_norms
    else:
        idx = np.asarray(idx, dtype=np.intp)
        X, sq = ds.X[idx], ds.squared_norms[idx]
    cross = np.asarray(X @ centers.T)
    csq = np.einsum("ij,ij->i", centers, centers)
    D = sq[:, None] - 2.0 * cross + csq[None, :]
    np.maximum(D, 0.0, out=D)
    return D


def nearest_active(D: np.ndarray, active: np.ndarray, tie_tol: float = 0.0):
    """Argmin over active columns (lowest index on ties) and a boundary flag per row."""
    if not active.any():
        raise KMeansError("all centers are inactive")
    D = np.where(active[None, :], D, np.inf)
    labels = np.argmin(D, axis=1)
    if active.sum() < 2:
        return labels, np.zeros(D.shape[0], dtype=bool)
    best = D[np.arange(D.shape[0]), labels]
    D2 = D.copy()
    D2[np.arange(D.shape[0]), labels] = np.inf
    second = D2.min(axis=1)
    # tolerance is on distances, not squared distances
    boundary = np.sqrt(second) - np.sqrt(best) <= tie_tol
    return labels, boundary


# ---------------------------------------------------------------------------
# the two maps of Lloyd's iteration


def assign(ds: Dataset, C: Centroids, tie_tol: float = 0.0, method: str = "auto"):
    """Voronoi assignment ``v(C)``.

    Returns ``(clustering, boundary_hit)``. ``boundary_hit`` is true when some
    point has its two nearest active centers within ``tie_tol`` of each other.
    """
    if C.dim != ds.dim:
        raise KMeansError(f"centroid dimension {C.dim} != dataset dimension {ds.dim}")
    D = squared_distances(ds, C.centers, method=method)
    labels, boundary = nearest_active(D, C.active, tie_tol)
    return Clustering(labels, C.k), bool(boundary.any())


def cluster_sums(ds: Dataset, A: Clustering) -> np.ndarray:
    """Per-cluster coordinate sums, accumulated in point-index order."""
    sums = np.zeros((A.k, ds.dim))
    mask = A.assignment != NONE
    if ds.is_sparse:
        import scipy.sparse as sp

        rows = A.assignment[mask]
        cols = np.flatnonzero(mask)
        M = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(A.k, ds.n))
        sums += (M @ ds.X).toarray()
    else:
        np.add.at(sums, A.assignment[mask], ds.X[mask])
    return sums


def means(ds: Dataset, A: Clustering, previous: Centroids | None = None) -> Centroids:
    """Mean map ``m(A)``.

    Empty clusters come back inactive. Their position is taken from
    ``previous`` when given, otherwise zero.
    """
    if A.n != ds.n:
        raise KMeansError("clustering and dataset sizes differ")
    sums = cluster_sums(ds, A)
    active = A.sizes > 0
    centers = np.zeros((A.k, ds.dim)) if previous is None else previous.centers.copy()
    centers[active] = sums[active] / A.sizes[active, None]
    return Centroids(centers, active)


def cost(ds: Dataset, C: Centroids, A: Clustering, method: str = "auto") -> CostReport:
    """``phi(C, A) = sum_r sum_{x in A_r} ||x - c_r||^2``."""
    mask = A.assignment != NONE
    idx = np.flatnonzero(mask)
    labels = A.assignment[mask]
    if method == "auto":
        method = "expansion" if ds.is_sparse else "naive"
    if method == "naive":
        X = ds.rows(idx)
        diff = X - C.centers[labels]
        per_point = np.einsum("ij,ij->i", diff, diff)
    elif method == "expansion":
        X = ds.X[idx]
        cross = np.asarray(X.multiply(C.centers[labels]).sum(axis=1)).ravel() if ds.is_sparse \
            else np.einsum("ij,ij->i", X, C.centers[labels])
        csq = np.einsum("ij,ij->i", C.centers, C.centers)
        per_point = np.maximum(ds.squared_norms[idx] - 2.0 * cross + csq[labels], 0.0)
    else:
        raise KMeansError(f"unknown cost method {method!r}")
    per_cluster = np.zeros(A.k)
    np.add.at(per_cluster, labels, per_point)
    return CostReport(float(per_cluster.sum()), per_cluster)


def voronoi_cost(ds: Dataset, C: Centroids, method: str = "auto") -> float:
    """``phi(C)``: cost of ``C`` under its own Voronoi assignment."""
    D = squared_distances(ds, C.centers, method=method)
    D = np.where(C.active[None, :], D, np.inf)
    labels = np.argmin(D, axis=1)
    best = D[np.arange(ds.n), labels]
    per_cluster = np.zeros(C.k)
    np.add.at(per_cluster, labels, best)
    return float(per_cluster.sum())


def centroidal_identity_check(Y, c) -> float:
    """Residual of ``phi(c, Y) = phi(m(Y), Y) + |Y| ||m(Y) - c||^2``."""
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    c = np.asarray(c, dtype=np.float64)
    if Y.shape[0] < 1:
        raise KMeansError("point set must be nonempty")
    mu = Y.mean(axis=0)
    lhs = float(np.sum((Y - c) ** 2))
    within = float(np.sum((Y - mu) ** 2))
    shift = Y.shape[0] * float(np.sum((mu - c) ** 2))
    return abs(lhs - within - shift)


# ---------------------------------------------------------------------------
# centroidal distance


def _delta_cost_matrix(Cp: Centroids, C: Centroids, weights, targets, sources):
    diff = C.centers[targets][:, None, :] - Cp.centers[sources][None, :, :]
    return np.asarray(weights, dtype=np.float64)[targets][:, None] * np.einsum(
        "ijk,ijk->ij", diff, diff
    )


def delta(Cp: Centroids, C: Centroids, weights, mode: str = "auto") -> DeltaResult:
    """Centroidal distance from ``Cp`` to ``C`` weighted by ``C``'s cluster sizes."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (C.k,):
        raise KMeansError("weights must have one entry per center of C")
    if Cp.dim != C.dim:
        raise KMeansError("centroid dimensions differ")
    targets = np.flatnonzero(C.active)
    sources = np.flatnonzero(Cp.active)
    if sources.size < targets.size:
        raise KMeansError(
            f"source has {sources.size} active centers, fewer than the {targets.size} targets"
        )
    if mode == "auto":
        mode = "exact" if targets.size <= EXACT_DELTA_MAX_K else "greedy"
    W = _delta_cost_matrix(Cp, C, weights, targets, sources)
    perm = np.full(C.k, NONE, dtype=np.int64)
    if mode == "exact":
        rows, cols = linear_sum_assignment(W)
        perm[targets[rows]] = sources[cols]
        value = float(W[rows, cols].sum())
    elif mode == "greedy":
        used = np.zeros(sources.size, dtype=bool)
        value = 0.0
        order = np.argsort(-weights[targets], kind="stable")
        for i in order:
            diff = Cp.centers[sources] - C.centers[targets[i]]
            dist = np.where(used, np.inf, np.einsum("ij,ij->i", diff, diff))
            j = int(np.argmin(dist))
            used[j] = True
            perm[targets[i]] = sources[j]
            value += float(W[i, j])
    else:
        raise KMeansError(f"unknown delta mode {mode!r}")
    return DeltaResult(value, perm, mode)


def delta_bruteforce(Cp: Centroids, C: Centroids, weights) -> float:
    """Minimum over every injective map; reference for small ``k``."""
    weights = np.asarray(weights, dtype=np.float64)
    targets = np.flatnonzero(C.active)
    sources = np.flatnonzero(Cp.active)
    W = _delta_cost_matrix(Cp, C, weights, targets, sources)
    perms = np.array(list(itertools.permutations(range(sources.size), targets.size)), dtype=np.intp)
    if perms.size == 0:
        return 0.0
    return float(W[np.arange(targets.size), perms].sum(axis=1).min())


def cost_gap_bound_check(ds: Dataset, C: Centroids, Cstar: Centroids, Astar: Clustering):
    """Check ``phi(C) - phi(C*) <= delta(C, C*)`` at a stationary point ``C*``.

    Returns ``(gap, delta_value, holds)``.
    """
    gap = voronoi_cost(ds, C) - voronoi_cost(ds, Cstar)
    dv = delta(C, Cstar, Astar.sizes).value
    return gap, dv, gap <= dv + 1e-9 * max(1.0, dv)


# ---------------------------------------------------------------------------
# serialization


def write_centroids(C: Centroids, path) -> None:
    with open(path, "w") as fh:
        for row in C.centers:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
        fh.write("#active=" + ",".join("1" if a else "0" for a in C.active) + "\n")


def read_centroids(path) -> Centroids:
    rows, active = [], None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#active="):
                active = [tok.strip() == "1" for tok in line[len("#active="):].split(",")]
                continue
            if line.startswith("#"):
                continue
            try:
                rows.append([float(tok) for tok in line.split(",")])
            except ValueError:
                raise KMeansError(f"{path}:{lineno}: cannot parse {line!r}") from None
    if not rows:
        raise KMeansError(f"{path}: no centers")
    return Centroids(np.array(rows), active)


def write_clustering(A: Clustering, path) -> None:
    with open(path, "w") as fh:
        for r in A.assignment:
            fh.write(f"{int(r)}\n")


def read_clustering(path, k: int | None = None) -> Clustering:
    with open(path) as fh:
        labels = [int(line) for line in fh if line.strip()]
    return Clustering.from_assignment(labels, k)
