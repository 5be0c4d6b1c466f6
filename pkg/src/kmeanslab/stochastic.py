"""Online and mini-batch stochastic k-means.

Each iteration draws ``m`` indices uniformly with replacement, assigns the
draws to their nearest active center and moves every center that received
draws toward the mean of its draws:

    c_r <- (1 - eta_r) c_r + eta_r * mean(draws assigned to r)

Centers that received nothing stay put (there is no relocation).
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .core import Centroids, Clustering, KMeansError, delta, nearest_active, squared_distances, voronoi_cost
from .dataset import Dataset
from .trace import RunTrace


@dataclass(frozen=True)
class LearningRatePolicy:
    """``flat``: ``eta_t = c_prime / (t0 + t)`` for every cluster.

    ``bbs``: ``eta_r = n_hat_r / N_r`` where ``N_r`` counts every draw that
    cluster ``r`` has received so far, this iteration included.
    """

    kind: str = "flat"
    c_prime: float = 1.0
    t0: float = 1.0

    def __post_init__(self):
        if self.kind == "flat":
            if not self.c_prime > 0:
                raise KMeansError("flat rate needs c_prime > 0")
            if not self.t0 >= 0:
                raise KMeansError("flat rate needs t0 >= 0")
            if not self.c_prime < self.t0 + 1:
                raise KMeansError(
                    f"flat rate needs c_prime < t0 + 1 so that eta < 1 "
                    f"(got c_prime={self.c_prime}, t0={self.t0})"
                )
        elif self.kind != "bbs":
            raise KMeansError(f"unknown learning-rate policy {self.kind!r}")

    @property
    def label(self) -> str:
        if self.kind == "bbs":
            return "bbs"
        return f"flat_c{self.c_prime:g}_t{self.t0:g}"

    def rates(self, t: int, n_hat: np.ndarray, counts: np.ndarray | None):
        """Per-cluster rates (NaN where ``n_hat == 0``) and updated counts."""
        hit = n_hat > 0
        eta = np.full(n_hat.shape, math.nan)
        if self.kind == "flat":
            eta[hit] = self.c_prime / (self.t0 + t)
            return eta, counts
        counts = (np.zeros(n_hat.shape, dtype=np.int64) if counts is None else counts) + n_hat
        eta[hit] = n_hat[hit] / counts[hit]
        return eta, counts


@dataclass
class StochasticConfig:
    m: int = 1
    policy: LearningRatePolicy = field(default_factory=LearningRatePolicy)
    max_iters: int = 100
    seed: int = 0
    reference: tuple[Centroids, Clustering] | None = None
    cost_eval_every: int = 1
    tol: float | None = 1e-6
    window: int = 10

    def __post_init__(self):
        if self.m < 1:
            raise KMeansError("mini-batch size m must be >= 1")
        if self.max_iters < 0:
            raise KMeansError("max_iters must be >= 0")
        if self.cost_eval_every < 1:
            raise KMeansError("cost_eval_every must be >= 1")
        if self.window < 1:
            raise KMeansError("window must be >= 1")

    def digest(self) -> str:
        text = (
            f"m={self.m};policy={self.policy.kind},{self.policy.c_prime!r},{self.policy.t0!r};"
            f"iters={self.max_iters};seed={self.seed};every={self.cost_eval_every};"
            f"tol={self.tol!r};window={self.window}"
        )
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass
class BatchStats:
    indices: np.ndarray
    labels: np.ndarray
    n_hat: np.ndarray
    eta: np.ndarray
    counts: np.ndarray | None


def _batch_sums(Xb, labels: np.ndarray, k: int, dim: int) -> np.ndarray:
    """Per-cluster sums of the batch rows, accumulated in draw order."""
    if sp.issparse(Xb):
        M = sp.csr_matrix(
            (np.ones(labels.size), (labels, np.arange(labels.size))), shape=(k, labels.size)
        )
        return (M @ Xb).toarray()
    sums = np.zeros((k, dim))
    np.add.at(sums, labels, Xb)
    return sums


def _apply(C: Centroids, sums: np.ndarray, n_hat: np.ndarray, eta: np.ndarray) -> Centroids:
    hit = n_hat > 0
    centers = C.centers.copy()
    c_hat = sums[hit] / n_hat[hit, None]
    e = eta[hit, None]
    centers[hit] = (1.0 - e) * centers[hit] + e * c_hat
    return Centroids(centers, C.active.copy())


def step(ds: Dataset, C_prev: Centroids, cfg: StochasticConfig, t: int, rng: np.random.Generator,
         counts: np.ndarray | None = None, batch=None):
    """One iteration. ``batch`` overrides sampling with explicit point indices."""
    if t < 1:
        raise KMeansError("iterations are numbered from 1")
    if batch is None:
        idx = rng.integers(0, ds.n, size=cfg.m)
    else:
        idx = np.asarray(batch, dtype=np.intp)
    D = squared_distances(ds, C_prev.centers, idx)
    labels, _ = nearest_active(D, C_prev.active)
    n_hat = np.bincount(labels, minlength=C_prev.k)
    Xb = ds.X[idx]
    sums = _batch_sums(Xb, labels, C_prev.k, ds.dim)
    eta, counts = cfg.policy.rates(t, n_hat, counts)
    C_next = _apply(C_prev, sums, n_hat, eta)
    return C_next, BatchStats(idx, labels, n_hat, eta, counts)


def _converged(phis: list[float], tol: float, window: int) -> bool:
    if len(phis) <= window:
        return False
    old, new = phis[-window - 1], phis[-1]
    if old <= 0:
        return True
    return (old - new) / old < tol


def run(ds: Dataset, C0: Centroids, cfg: StochasticConfig) -> tuple[Centroids, RunTrace]:
    """Iterate :func:`step` for ``cfg.max_iters`` iterations or until the
    evaluated cost stops improving by ``cfg.tol`` (relative) across
    ``cfg.window`` consecutive evaluations. ``tol=None`` disables the early stop.
    """
    rng = np.random.default_rng(cfg.seed)
    trace = RunTrace(k=C0.k, seed=cfg.seed, config_digest=cfg.digest())
    ref_C, ref_w = None, None
    if cfg.reference is not None:
        ref_C, ref_A = cfg.reference
        ref_w = ref_A.sizes
    trace.phi0 = voronoi_cost(ds, C0)
    if ref_C is not None:
        trace.delta0 = delta(C0, ref_C, ref_w).value
    C = C0.copy()
    counts = None
    evaluated: list[float] = []
    trace.stopped_reason = "max_iters"
    for t in range(1, cfg.max_iters + 1):
        C, stats = step(ds, C, cfg, t, rng, counts)
        counts = stats.counts
        phi = math.nan
        if t % cfg.cost_eval_every == 0:
            phi = voronoi_cost(ds, C)
            evaluated.append(phi)
        dv = delta(C, ref_C, ref_w).value if ref_C is not None else math.nan
        trace.append(t, phi, stats.n_hat, stats.eta, dv)
        if cfg.tol is not None and not math.isnan(phi) and _converged(evaluated, cfg.tol, cfg.window):
            trace.stopped_reason = "converged"
            break
    return C, trace


def verify_bbs_running_average(C0: Centroids, batches) -> float:
    """Replay scripted batches under the BBS rate and compare with plain averages.

    ``batches`` is a sequence of ``(points, scripted_labels)`` pairs. Every
    draw must be nearest to its scripted center at the moment it is applied.
    Returns the largest distance between a replayed center and the mean of
    all points ever assigned to it (centers never hit are compared with
    their starting position).
    """
    policy = LearningRatePolicy("bbs")
    C = C0.copy()
    counts = None
    totals = np.zeros((C.k, C.dim))
    seen = np.zeros(C.k, dtype=np.int64)
    for t, (pts, scripted) in enumerate(batches, start=1):
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, C.dim)
        scripted = np.asarray(scripted, dtype=np.int64).reshape(-1)
        if pts.shape[0]:
            diff = pts[:, None, :] - C.centers[None, :, :]
            labels, _ = nearest_active(np.einsum("ijk,ijk->ij", diff, diff), C.active)
            bad = np.flatnonzero(labels != scripted)
            if bad.size:
                i = int(bad[0])
                raise KMeansError(
                    f"step {t}: draw {i} is nearest to center {labels[i]}, scripted {scripted[i]}"
                )
        n_hat = np.bincount(scripted, minlength=C.k)
        eta, counts = policy.rates(t, n_hat, counts)
        C = _apply(C, _batch_sums(pts, scripted, C.k, C.dim), n_hat, eta)
        for x, r in zip(pts, scripted):
            totals[r] += x
            seen[r] += 1
    expected = C0.centers.copy()
    hit = seen > 0
    expected[hit] = totals[hit] / seen[hit, None]
    return float(np.max(np.linalg.norm(C.centers - expected, axis=1)))


def update_probability(n_r: int, n: int, m: int) -> float:
    """Chance that a cluster of ``n_r`` points gets at least one of ``m`` draws."""
    if n < 1 or m < 1 or not 0 <= n_r <= n:
        raise KMeansError("need 0 <= n_r <= n, n >= 1 and m >= 1")
    return 1.0 - (1.0 - n_r / n) ** m
