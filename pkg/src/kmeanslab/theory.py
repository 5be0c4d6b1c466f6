"""Clusterability checks, stability probes and convergence-rate helpers."""
from __future__ import annotations

import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import (
    Centroids,
    Clustering,
    KMeansError,
    assign,
    cost,
    delta,
    means,
    voronoi_cost,
)
from .dataset import Dataset
from .trace import RunTrace


# ---------------------------------------------------------------------------
# margins and separation


def margin(ds: Dataset, A: Clustering, C: Centroids, r: int, s: int) -> float:
    """Smallest gap between projected distances to ``c_r`` and ``c_s``.

    Points of clusters ``r`` and ``s`` are projected onto the line through
    the two centers; the margin is the minimum over those points of
    ``| |x_proj - c_r| - |x_proj - c_s| |``.
    """
    if r == s:
        raise KMeansError("margin needs two different clusters")
    if A.sizes[r] == 0 or A.sizes[s] == 0:
        raise KMeansError(f"cluster {r if A.sizes[r] == 0 else s} is empty")
    cr, cs = C.centers[r], C.centers[s]
    axis = cs - cr
    length = float(np.linalg.norm(axis))
    if length == 0.0:
        raise KMeansError("coincident centers: the projection line is undefined")
    u = axis / length
    idx = np.flatnonzero((A.assignment == r) | (A.assignment == s))
    X = ds.rows(idx)
    lam = (X - cr) @ u  # signed position along the line, c_r at 0 and c_s at length
    return float(np.min(np.abs(np.abs(lam) - np.abs(lam - length))))


def f_threshold(alpha: float, sizes) -> float:
    """Lower limit on the separation factor ``f(alpha)``."""
    sizes = np.asarray(sizes, dtype=np.float64)
    ratio = float(sizes.max() / sizes.min()) if sizes.size > 1 else 1.0
    return max(64.0**2, (5 * alpha + 5) / (256 * alpha), ratio)


@dataclass
class AssumptionReport:
    alpha: float
    phi_opt: float
    p_min: float
    f_required: float
    f_achieved: float
    gamma_achieved: float
    f_used: float
    gamma_used: float
    gamma_threshold: float
    b3_threshold: float
    b1_holds: bool
    b2_holds: bool
    b3_holds: bool
    separation_infinite: bool = False
    notes: list = field(default_factory=list)

    @property
    def stable_radius(self) -> float:
        """Basin radius ``gamma^2 f^2 / 16^2`` implied when separation and margin hold."""
        return self.gamma_used**2 * self.f_used**2 / 16.0**2

    def to_text(self) -> str:
        buf = io.StringIO()
        for key, val in asdict(self).items():
            if key == "notes":
                for note in val:
                    buf.write(f"note = {note}\n")
                continue
            buf.write(f"{key} = {val}\n")
        buf.write(f"stable_radius = {self.stable_radius}\n")
        return buf.getvalue()


def check_assumptions(ds: Dataset, A: Clustering, C: Centroids, alpha: float,
                      gamma: float | None = None, f: float | None = None) -> AssumptionReport:
    """Evaluate mean separation, margin and balance for a candidate optimum.

    ``f`` and ``gamma`` default to the largest values the instance supports
    (the achieved separation factor and margin ratio); passing them tests a
    specific target instead.
    """
    if not 0 < alpha < 1:
        raise KMeansError("alpha must lie in (0, 1)")
    if np.any(A.sizes == 0):
        raise KMeansError(f"cluster {int(np.flatnonzero(A.sizes == 0)[0])} is empty")
    k = A.k
    sizes = A.sizes.astype(np.float64)
    phi = cost(ds, C, A).total
    notes = []
    f_req = f_threshold(alpha, sizes)
    p_min = float(sizes.min() / ds.n)

    infinite = phi == 0.0
    f_ach = math.inf
    gamma_ach = math.inf
    for r in range(k):
        for s in range(r + 1, k):
            dist = float(np.linalg.norm(C.centers[r] - C.centers[s]))
            if not infinite:
                denom = math.sqrt(phi) * (1 / math.sqrt(sizes[r]) + 1 / math.sqrt(sizes[s]))
                f_ach = min(f_ach, dist / denom)
            gamma_ach = min(gamma_ach, margin(ds, A, C, r, s) / dist)
    if k == 1:
        notes.append("single cluster: pairwise conditions are vacuous")
        gamma_ach = math.inf
    if infinite:
        notes.append("phi_opt = 0: separation infinite, mean separation holds vacuously")

    f_used = f_ach if f is None else float(f)
    gamma_used = gamma_ach if gamma is None else float(gamma)
    b1 = infinite or k == 1 or (f_used > f_req and f_used <= f_ach)
    gamma_thr = 8 * math.sqrt(2) / math.sqrt(f_used) if f_used > 0 else math.inf
    b2 = k == 1 or (gamma_used > gamma_thr and gamma_used <= gamma_ach)
    if math.isinf(gamma_used):
        b3_thr = math.sqrt(alpha)
    else:
        b3_thr = gamma_used / (16.0**2 * f_used) + math.sqrt(alpha)
    b3 = p_min >= b3_thr
    return AssumptionReport(
        alpha=alpha, phi_opt=phi, p_min=p_min, f_required=f_req, f_achieved=f_ach,
        gamma_achieved=gamma_ach, f_used=f_used, gamma_used=gamma_used,
        gamma_threshold=gamma_thr, b3_threshold=b3_thr, b1_holds=bool(b1),
        b2_holds=bool(b2), b3_holds=bool(b3), separation_infinite=infinite, notes=notes,
    )


# ---------------------------------------------------------------------------
# stability probe


@dataclass
class ProbeTrial:
    b_prime: float
    delta_ratio: float  # delta(C, C*) / phi*
    sym_diff_ratio: float
    post_step_ratio: float  # delta(one Lloyd step from C, C*) / (b' phi*)
    bound: float = math.nan
    holds: bool = True


@dataclass
class StabilityReport:
    b0: float
    alpha_estimate: float
    alpha_used: float
    trials: list
    stable_radius: float | None = None

    @property
    def failures(self) -> int:
        return sum(not t.holds for t in self.trials)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("trial,b_prime,delta_ratio,sym_diff_ratio,post_step_ratio,bound,holds\n")
        for i, t in enumerate(self.trials):
            buf.write(
                f"{i},{t.b_prime!r},{t.delta_ratio!r},{t.sym_diff_ratio!r},"
                f"{t.post_step_ratio!r},{t.bound!r},{int(t.holds)}\n"
            )
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [
            f"b0 = {self.b0}",
            f"alpha_estimate = {self.alpha_estimate}",
            f"alpha_used = {self.alpha_used}",
            f"trials = {len(self.trials)}",
            f"failures = {self.failures}",
        ]
        if self.stable_radius is not None:
            lines.append(f"stable_radius = {self.stable_radius}")
        return "\n".join(lines) + "\n"


def perturb(Cstar: Centroids, sizes, target: float, rng: np.random.Generator) -> Centroids:
    """Move each center along a random direction so that ``sum_r n_r |shift_r|^2 = target``."""
    k, d = Cstar.centers.shape
    u = rng.standard_normal((k, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    scale = math.sqrt(target / k)
    shift = u * (scale / np.sqrt(np.asarray(sizes, dtype=np.float64)))[:, None]
    return Centroids(Cstar.centers + shift, Cstar.active.copy())


def stability_probe(ds: Dataset, Astar: Clustering, Cstar: Centroids, b0: float, trials: int,
                    seed: int = 0, alpha: float | None = None,
                    assumptions: AssumptionReport | None = None) -> StabilityReport:
    """Empirical contraction of one Lloyd step around a stationary point.

    Trial 0 is the unperturbed point. Each further trial draws ``b'`` uniform
    in ``(0, b0]`` and a random ``C`` at distance ``b' phi*`` from ``C*``. The
    per-trial inequality on the symmetric difference uses ``b = alpha b'``,
    with ``alpha`` defaulting to the estimate.
    """
    if b0 <= 0:
        raise KMeansError("b0 must be positive")
    phi_star = cost(ds, Cstar, Astar).total
    if phi_star <= 0:
        raise KMeansError("stability probe needs phi* > 0")
    sizes = Astar.sizes
    records = []
    extras = []
    for i in range(trials + 1):
        if i == 0:
            b_prime, C = 0.0, Cstar.copy()
        else:
            rng = np.random.default_rng([seed, i])
            b_prime = float(b0 * (1.0 - rng.random()))  # (0, b0]
            C = perturb(Cstar, sizes, b_prime * phi_star, rng)
        dres = delta(C, Cstar, sizes)
        A, _ = assign(ds, C)
        worst = 0.0
        for r in range(Cstar.k):
            src = dres.permutation[r]
            mine = A.assignment == src
            theirs = Astar.assignment == r
            worst = max(worst, np.count_nonzero(mine ^ theirs) / sizes[r])
        C1 = means(ds, A, previous=C)
        if b_prime == 0.0:
            post = 0.0 if np.array_equal(C1.centers, Cstar.centers) else math.inf
        elif C1.n_active < Cstar.n_active:
            post = math.inf
        else:
            post = delta(C1, Cstar, sizes).value / (b_prime * phi_star)
        records.append(ProbeTrial(b_prime, dres.value / phi_star, float(worst), float(post)))
        extras.append(voronoi_cost(ds, C) / phi_star)
    alpha_est = max(t.post_step_ratio for t in records)
    alpha_used = alpha_est if alpha is None else float(alpha)
    for t, ratio in zip(records, extras):
        b = alpha_used * t.b_prime
        t.bound = b / (5 * b + 4 * (1 + ratio)) if math.isfinite(b) else 1.0
        t.holds = bool(t.sym_diff_ratio <= t.bound)
    radius = None
    if assumptions is not None and assumptions.b1_holds and assumptions.b2_holds:
        radius = assumptions.stable_radius
    return StabilityReport(b0, float(alpha_est), alpha_used, records, radius)


# ---------------------------------------------------------------------------
# closed-form quantities


def beta_value(c_prime: float, p_min_over_t: float, a_max_ratio: float, alpha: float) -> float:
    """``2 c' p_min (1 - a_max sqrt(alpha))``; convergence needs this above 1."""
    return 2.0 * c_prime * p_min_over_t * (1.0 - a_max_ratio * math.sqrt(alpha))


def rho_value(p_min: float, m: int, gamma: float = 0.0, f: float = math.inf) -> float:
    """``1 - [1 - (p_min - gamma / (16^2 f))]^m``."""
    p = p_min - (gamma / (16.0**2 * f) if math.isfinite(f) else 0.0)
    return 1.0 - (1.0 - p) ** m


@dataclass(frozen=True)
class BoundParams:
    a: float
    b: float
    t0: float
    u_t0: float


def recurrence_envelope(params: BoundParams, t) -> float | np.ndarray:
    """Closed-form bound for ``u_t <= (1 - a/t) u_{t-1} + b/t^2`` started at ``t0``."""
    a, b, t0, u0 = params.a, params.b, params.t0, params.u_t0
    if not a > 1:
        raise KMeansError("the closed form needs a > 1")
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < t0):
        raise KMeansError("t must be >= t0")
    val = ((t0 + 1) / (t + 1)) ** a * u0 + b / (a - 1) * (1 + 1 / (t0 + 1)) ** (a + 1) / (t + 1)
    return float(val) if val.ndim == 0 else val


# ---------------------------------------------------------------------------
# log-log slope


@dataclass
class SlopeFit:
    slope: float
    intercept: float
    r2: float
    n_points: int
    phi_floor: float


def slope_estimate(trace, phi_floor: float | None = None, window="second-half") -> SlopeFit:
    """Least-squares slope of ``log(phi_t - floor)`` against ``log t``.

    ``trace`` is a :class:`RunTrace` or a ``(t, phi)`` pair. The floor
    defaults to the smallest observed cost. ``window`` is ``"second-half"``
    (the later half of the rows), ``"all"``, or an inclusive ``(t_lo, t_hi)``.
    """
    if isinstance(trace, RunTrace):
        t, phi = trace.t_array().astype(np.float64), trace.phi_array()
        phi0 = trace.phi0
    else:
        t, phi = (np.asarray(v, dtype=np.float64) for v in trace)
        phi0 = math.nan
    keep = ~np.isnan(phi)
    t, phi = t[keep], phi[keep]
    if phi.size == 0:
        raise KMeansError("no evaluated costs in the trace")
    if phi_floor is None:
        phi_floor = float(phi.min())
    if math.isnan(phi0):
        phi0 = float(phi[0])
    if window == "second-half":
        sel = np.arange(t.size) >= t.size // 2
    elif window == "all":
        sel = np.ones(t.size, dtype=bool)
    else:
        lo, hi = window
        sel = (t >= lo) & (t <= hi)
    gap = phi - phi_floor
    sel &= (gap > 0) & (gap >= 1e-12 * abs(phi0)) & (t > 0)
    if np.count_nonzero(sel) < 2:
        raise KMeansError("fewer than 2 usable points for the slope fit")
    x, y = np.log(t[sel]), np.log(gap[sel])
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return SlopeFit(float(slope), float(intercept), r2, int(np.count_nonzero(sel)), float(phi_floor))
