"""Batch, online and mini-batch k-means with solution-space diagnostics."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    Centroids,
    Clustering,
    KMeansError,
    assign,
    cost,
    delta,
    means,
    voronoi_cost,
)
from .dataset import Dataset, SyntheticSpec, generate_clusterable, load_sparse  # noqa: E402

__all__ = [
    "Centroids",
    "Clustering",
    "Dataset",
    "KMeansError",
    "SyntheticSpec",
    "assign",
    "cost",
    "delta",
    "generate_clusterable",
    "load_sparse",
    "means",
    "voronoi_cost",
]
