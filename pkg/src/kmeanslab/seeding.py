"""Initial centers: uniform sampling and Buckshot (single linkage on a sample)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Centroids, KMeansError
from .dataset import Dataset


@dataclass(frozen=True)
class SeedSpec:
    method: str  # "random-points" | "buckshot"
    k: int
    m0: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("random-points", "buckshot"):
            raise KMeansError(f"unknown seeding method {self.method!r}")
        if self.k < 1:
            raise KMeansError("k must be >= 1")
        if self.method == "buckshot" and (self.m0 is None or self.m0 < self.k):
            raise KMeansError("buckshot requires m0 >= k")


def seed_random(ds: Dataset, k: int, rng: np.random.Generator) -> Centroids:
    """``k`` distinct data points chosen uniformly without replacement."""
    if k > ds.n:
        raise KMeansError(f"cannot pick k={k} distinct points from n={ds.n}")
    idx = rng.choice(ds.n, size=k, replace=False)
    return Centroids(ds.rows(idx).copy())


def single_linkage(points, target_components: int) -> np.ndarray:
    """Agglomerate singletons until ``target_components`` remain.

    Each merge joins the two components at the smallest point-to-point
    distance. A component is identified by its smallest point index, and
    distance ties go to the lexicographically smallest pair of ids.

    Returns a label per point in ``0..target_components-1``, numbered in
    order of each component's smallest member.
    """
    P = np.asarray(points, dtype=np.float64)
    if P.ndim == 1:
        P = P[:, None]
    n = P.shape[0]
    n_distinct = len(np.unique(P, axis=0))
    if target_components < 1 or target_components > n_distinct:
        raise KMeansError(
            f"cannot form {target_components} components from {n_distinct} distinct points"
        )
    diff = P[:, None, :] - P[None, :, :]
    # component-level distance matrix indexed by component id; only the upper
    # triangle of live ids is meaningful
    D = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    D[np.tril_indices(n)] = np.inf
    owner = np.arange(n)
    for _ in range(n - target_components):
        flat = int(np.argmin(D))  # row-major: first hit is the smallest (a, b)
        a, b = divmod(flat, n)
        # single-linkage update: d(a u b, c) = min(d(a, c), d(b, c))
        merged = np.minimum(np.minimum(D[a], D[:, a]), np.minimum(D[b], D[:, b]))
        merged[[a, b]] = np.inf
        D[:a, a] = merged[:a]
        D[a, a + 1 :] = merged[a + 1 :]
        D[b, :] = np.inf
        D[:, b] = np.inf
        owner[owner == b] = a
    _, labels = np.unique(owner, return_inverse=True)
    return labels.ravel()


def seed_buckshot(ds: Dataset, k: int, m0: int, rng: np.random.Generator) -> Centroids:
    """Means of the ``k`` single-linkage components of ``m0`` points drawn with replacement."""
    if m0 < k:
        raise KMeansError("buckshot requires m0 >= k")
    idx = rng.integers(0, ds.n, size=m0)
    sample = ds.rows(idx)
    n_distinct = len(np.unique(sample, axis=0))
    if n_distinct < k:
        raise KMeansError(
            f"only {n_distinct} distinct points among {m0} samples; increase m0 to reach k={k}"
        )
    labels = single_linkage(sample, k)
    centers = np.zeros((k, ds.dim))
    np.add.at(centers, labels, sample)
    centers /= np.bincount(labels, minlength=k)[:, None]
    return Centroids(centers)


def seed(ds: Dataset, spec: SeedSpec) -> Centroids:
    rng = np.random.default_rng(spec.seed)
    if spec.method == "random-points":
        return seed_random(ds, spec.k, rng)
    return seed_buckshot(ds, spec.k, spec.m0, rng)
