"""Batch k-means (Lloyd's iteration) and stationary-clustering tools."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    Centroids,
    Clustering,
    KMeansError,
    assign,
    cost,
    means,
    nearest_active,
    squared_distances,
)
from .dataset import Dataset
from .trace import RunTrace

ENUM_MAX_N = 14
ENUM_MAX_K = 3


@dataclass
class BatchResult:
    final_centroids: Centroids
    final_clustering: Clustering
    trace: RunTrace
    stopped_reason: str  # "stationary" | "max_iters" | "boundary_ambiguous"


def _same(A: Clustering, B: Clustering) -> bool:
    if np.array_equal(A.assignment, B.assignment):
        return True
    return A.same_partition(B)


def lloyd_run(ds: Dataset, C0: Centroids, max_iters: int = 300, tie_tol: float = 0.0) -> BatchResult:
    """Alternate Voronoi assignment and means until the clustering repeats.

    Centers that lose all their points are frozen where they are and
    excluded from later assignments.
    """
    C = C0.copy()
    trace = RunTrace(k=C.k)
    A, boundary = assign(ds, C, tie_tol)
    trace.phi0 = cost(ds, C, A).total
    reason = "max_iters"
    for t in range(1, max_iters + 1):
        C_next = means(ds, A, previous=C)
        C_next.active &= C.active
        for r in np.flatnonzero(C.active & ~C_next.active):
            trace.events.append(f"t={t}: center {r} degenerated (frozen)")
        C = C_next
        trace.append(t, cost(ds, C, A).total, A.sizes, np.where(C.active, 1.0, math.nan))
        A_next, boundary = assign(ds, C, tie_tol)
        if _same(A_next, A):
            reason = "boundary_ambiguous" if boundary else "stationary"
            break
        A = A_next
    trace.stopped_reason = reason
    return BatchResult(C, A, trace, reason)


def is_stationary(ds: Dataset, A: Clustering, tie_tol: float = 0.0) -> tuple[bool, bool]:
    """Whether ``m(A)`` lies in the closure of the Voronoi class of ``A``.

    Returns ``(stationary, boundary)``. A clustering counts as stationary when
    every point is at least as close to its own cluster mean as to any other
    mean, so equidistant points are allowed; ``boundary`` reports whether any
    such tie exists.
    """
    C = means(ds, A)
    D = squared_distances(ds, C.centers)
    labels, boundary = nearest_active(D, C.active, tie_tol)
    if np.any(A.assignment < 0):
        return False, bool(boundary.any())
    own = D[np.arange(ds.n), A.assignment]
    best = D[np.arange(ds.n), labels]
    return bool(np.all(own <= best)), bool(boundary.any())


def _restricted_growth_strings(n: int, k: int) -> np.ndarray:
    """All set partitions of ``n`` items into at most ``k`` blocks, as label rows."""
    L = np.zeros((1, 1), dtype=np.int8)
    top = np.zeros(1, dtype=np.int8)
    for _ in range(1, n):
        parts, tops = [], []
        for v in range(k):
            sel = v <= top + 1
            if not sel.any():
                continue
            rows = L[sel]
            parts.append(np.hstack([rows, np.full((rows.shape[0], 1), v, dtype=np.int8)]))
            tops.append(np.maximum(top[sel], v))
        L = np.vstack(parts)
        top = np.concatenate(tops).astype(np.int8)
    return L


def enumerate_stationary(ds: Dataset, k: int, chunk: int = 20000) -> list[tuple[Clustering, Centroids]]:
    """Every stationary clustering with at most ``k`` clusters (tiny inputs only)."""
    if ds.n > ENUM_MAX_N or k > ENUM_MAX_K:
        raise KMeansError(
            f"enumeration limited to n <= {ENUM_MAX_N} and k <= {ENUM_MAX_K} (got n={ds.n}, k={k})"
        )
    if k < 1:
        raise KMeansError("k must be >= 1")
    X = ds.dense()
    scale = max(1.0, float(np.max(ds.squared_norms)))
    L_all = _restricted_growth_strings(ds.n, k)
    found = []
    for lo in range(0, L_all.shape[0], chunk):
        L = L_all[lo : lo + chunk].astype(np.intp)
        onehot = (L[:, :, None] == np.arange(k)).astype(np.float64)
        counts = onehot.sum(axis=1)
        sums = np.einsum("pnk,nd->pkd", onehot, X)
        M = sums / np.where(counts > 0, counts, 1.0)[:, :, None]
        diff = X[None, :, None, :] - M[:, None, :, :]
        D = np.einsum("pnkd,pnkd->pnk", diff, diff)
        D = np.where((counts > 0)[:, None, :], D, np.inf)
        own = np.take_along_axis(D, L[:, :, None], axis=2)[:, :, 0]
        # loose prefilter; every survivor is re-checked exactly below
        ok = np.all(own <= D.min(axis=2) + 1e-9 * scale, axis=1)
        for row in L[ok]:
            A = Clustering(row.astype(np.int64), k)
            if is_stationary(ds, A)[0]:
                found.append((A, means(ds, A)))
    return found
