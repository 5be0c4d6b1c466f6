"""Sweeps over mini-batch size, k and learning-rate policy.

Within one k, every (m, policy) combination starts from the same initial
centers, and run ``j`` of every cell uses the same sampling seed, so
policies are compared on common random numbers. Results are assembled in
cell order, which keeps output files byte-identical for any thread count.
"""
from __future__ import annotations

import hashlib
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .core import Centroids, KMeansError
from .dataset import Dataset, SyntheticSpec, generate_clusterable, guess_format, load_sparse, simplex_centers
from .seeding import seed_buckshot, seed_random
from .stochastic import LearningRatePolicy, StochasticConfig, run
from .theory import slope_estimate
from .trace import RunTrace

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, *keys: int) -> int:
    """Fold ``keys`` into ``master`` one splitmix64 round at a time."""
    h = splitmix64(master & _MASK64)
    for key in keys:
        h = splitmix64(h ^ (key & _MASK64))
    return h


INIT_STREAM = 0x1D17


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class ExperimentConfig:
    dataset: str | None = None
    dataset_format: str | None = None
    synthetic: SyntheticSpec | None = None
    m_list: list = field(default_factory=lambda: [1])
    k_list: list = field(default_factory=lambda: [2])
    policies: list = field(default_factory=lambda: [LearningRatePolicy("flat", 2.0, 3.0)])
    reps: int = 5
    iters: int = 100
    seed: int = 0
    out_dir: str = "out"
    normalize: bool = False
    cost_eval_every: int = 1
    seeding: str = "random-points"
    m0: int | None = None

    def validate(self) -> None:
        problems = []
        if (self.dataset is None) == (self.synthetic is None):
            problems.append("dataset: give exactly one of dataset or synthetic.*")
        if not self.m_list or any(m < 1 for m in self.m_list):
            problems.append("m_list: every mini-batch size must be >= 1")
        if not self.k_list or any(k < 1 for k in self.k_list):
            problems.append("k_list: every k must be >= 1")
        if not self.policies:
            problems.append("policy: at least one policy is required")
        if self.reps < 1:
            problems.append("reps: must be >= 1")
        if self.iters < 1:
            problems.append("iters: must be >= 1")
        if self.cost_eval_every < 1:
            problems.append("cost_eval_every: must be >= 1")
        if self.seeding not in ("random-points", "buckshot"):
            problems.append(f"seeding: unknown method {self.seeding!r}")
        if self.seeding == "buckshot" and (self.m0 is None or self.m0 < max(self.k_list or [1])):
            problems.append("m0: buckshot needs m0 >= every k")
        if problems:
            raise ConfigError(problems)

    def canonical_text(self) -> str:
        lines = [
            f"dataset = {self.dataset}",
            f"dataset_format = {self.dataset_format}",
        ]
        if self.synthetic is not None:
            s = self.synthetic
            lines += [f"synthetic.center = {','.join(repr(v) for v in c)}" for c in s.centers]
            lines += [f"synthetic.size = {v}" for v in s.sizes]
            lines += [f"synthetic.radius = {s.radius!r}", f"synthetic.seed = {s.seed}"]
        lines += [
            f"m_list = {','.join(map(str, self.m_list))}",
            f"k_list = {','.join(map(str, self.k_list))}",
        ]
        for i, p in enumerate(self.policies):
            lines += [f"policy.{i}.kind = {p.kind}", f"policy.{i}.c_prime = {p.c_prime!r}",
                      f"policy.{i}.t0 = {p.t0!r}"]
        lines += [
            f"reps = {self.reps}", f"iters = {self.iters}", f"seed = {self.seed}",
            f"normalize = {self.normalize}", f"cost_eval_every = {self.cost_eval_every}",
            f"seeding = {self.seeding}", f"m0 = {self.m0}",
        ]
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:16]


def _ints(values: list[str]) -> list[int]:
    out = []
    for v in values:
        out += [int(tok) for tok in v.split(",") if tok.strip()]
    return out


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_config(text: str, base_dir: str | os.PathLike | None = None) -> ExperimentConfig:
    """Parse ``key = value`` lines; repeated keys accumulate into lists."""
    entries: dict[str, list[str]] = {}
    problems = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            problems.append(f"line {lineno}: expected 'key = value'")
            continue
        entries.setdefault(key.strip(), []).append(val.strip())
    if problems:
        raise ConfigError(problems)

    cfg = ExperimentConfig()
    known = {"dataset", "dataset_format", "m_list", "k_list", "reps", "iters", "seed", "out_dir",
             "normalize", "cost_eval_every", "seeding", "m0"}

    def one(key):
        vals = entries[key]
        if len(vals) > 1:
            problems.append(f"{key}: given {len(vals)} times")
        return vals[-1]

    def grab(key, conv, attr=None):
        if key not in entries:
            return
        try:
            setattr(cfg, attr or key, conv(one(key)))
        except ValueError as exc:
            problems.append(f"{key}: {exc}")

    grab("dataset", str)
    grab("dataset_format", str)
    grab("reps", int)
    grab("iters", int)
    grab("seed", int)
    grab("out_dir", str)
    grab("normalize", _bool)
    grab("cost_eval_every", int)
    grab("seeding", str)
    grab("m0", int)
    for key in ("m_list", "k_list"):
        if key in entries:
            try:
                setattr(cfg, key, _ints(entries[key]))
            except ValueError as exc:
                problems.append(f"{key}: {exc}")
    if cfg.dataset is not None and base_dir is not None and not os.path.isabs(cfg.dataset):
        cfg.dataset = str(Path(base_dir) / cfg.dataset)
    if "out_dir" in entries and base_dir is not None and not os.path.isabs(cfg.out_dir):
        cfg.out_dir = str(Path(base_dir) / cfg.out_dir)

    # policies
    pol: dict[int, dict[str, str]] = {}
    for key in entries:
        if key.startswith("policy."):
            parts = key.split(".")
            if len(parts) != 3 or not parts[1].isdigit() or parts[2] not in ("kind", "c_prime", "t0"):
                problems.append(f"{key}: expected policy.<N>.kind|c_prime|t0")
                continue
            pol.setdefault(int(parts[1]), {})[parts[2]] = one(key)
    if pol:
        cfg.policies = []
        for idx in sorted(pol):
            fields = pol[idx]
            try:
                cfg.policies.append(LearningRatePolicy(
                    fields.get("kind", "flat"),
                    float(fields.get("c_prime", 1.0)),
                    float(fields.get("t0", 1.0)),
                ))
            except (KMeansError, ValueError) as exc:
                problems.append(f"policy.{idx}: {exc}")

    # synthetic dataset
    syn = {k[len("synthetic."):]: v for k, v in entries.items() if k.startswith("synthetic.")}
    if syn:
        try:
            cfg.synthetic = _synthetic_from(syn)
        except (ValueError, KMeansError) as exc:
            problems.append(f"synthetic: {exc}")

    unknown = [k for k in entries if k not in known and not k.startswith(("policy.", "synthetic."))]
    problems += [f"{k}: unknown key" for k in unknown]
    if problems:
        raise ConfigError(problems)
    cfg.validate()
    return cfg


def _synthetic_from(syn: dict[str, list[str]]) -> SyntheticSpec:
    radius = float(syn.get("radius", ["1.0"])[-1])
    seed = int(syn.get("seed", ["0"])[-1])
    if "center" in syn:
        centers = [tuple(float(t) for t in c.split(",")) for c in syn["center"]]
    else:
        k = int(syn["k"][-1])
        dim = int(syn.get("dim", [str(k)])[-1])
        centers = simplex_centers(k, dim, float(syn.get("separation", ["10.0"])[-1]))
    sizes = _ints(syn.get("size", ["100"]))
    if len(sizes) == 1:
        sizes = sizes * len(centers)
    return SyntheticSpec(tuple(centers), tuple(sizes), radius, seed)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(), base_dir=path.parent)


# ---------------------------------------------------------------------------


@dataclass
class CellResult:
    m: int
    k: int
    policy: LearningRatePolicy
    phi0: float
    phi_avg: np.ndarray  # length iters, index t-1
    phi_min: float
    slope: float | None
    r2: float | None
    c0_digest: str
    run_seeds: list
    traces: list

    @property
    def t(self) -> np.ndarray:
        return np.arange(1, self.phi_avg.size + 1)

    @property
    def baseline(self) -> np.ndarray:
        return (self.phi0 - self.phi_min) / self.t

    @property
    def name(self) -> str:
        return f"{self.m}_{self.k}_{self.policy.label}"


@dataclass
class SweepResult:
    config: ExperimentConfig
    cells: list

    def cell(self, m: int, k: int, policy_label: str | None = None) -> CellResult:
        for c in self.cells:
            if c.m == m and c.k == k and (policy_label is None or c.policy.label == policy_label):
                return c
        raise KeyError((m, k, policy_label))


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.dataset is not None:
        fmt = cfg.dataset_format or guess_format(cfg.dataset)
        ds = load_sparse(cfg.dataset, fmt)
    else:
        ds = generate_clusterable(cfg.synthetic)[0]
    return ds.normalized() if cfg.normalize else ds


def initial_centers(ds: Dataset, cfg: ExperimentConfig, k_index: int) -> Centroids:
    k = cfg.k_list[k_index]
    rng = np.random.default_rng(derive_seed(cfg.seed, INIT_STREAM, k_index))
    if cfg.seeding == "buckshot":
        return seed_buckshot(ds, k, cfg.m0, rng)
    return seed_random(ds, k, rng)


def run_sweep(cfg: ExperimentConfig, threads: int = 1, ds: Dataset | None = None) -> SweepResult:
    """Run every (k, m, policy, repetition) and average the cost curves."""
    cfg.validate()
    if ds is None:
        ds = load_dataset(cfg)
    inits = [initial_centers(ds, cfg, i) for i in range(len(cfg.k_list))]
    cells = [(ki, k, m) for ki, k in enumerate(cfg.k_list) for m in cfg.m_list]
    tasks = []
    for ci, (ki, k, m) in enumerate(cells):
        for pi, policy in enumerate(cfg.policies):
            for r in range(cfg.reps):
                seed = derive_seed(cfg.seed, ci, r)
                scfg = StochasticConfig(m=m, policy=policy, max_iters=cfg.iters, seed=seed,
                                        cost_eval_every=cfg.cost_eval_every, tol=None)
                tasks.append((ci, pi, r, inits[ki], scfg))

    def work(task):
        _, _, _, C0, scfg = task
        return run(ds, C0, scfg)[1]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            traces = list(pool.map(work, tasks))
    else:
        traces = [work(t) for t in tasks]

    by_key: dict[tuple[int, int], list[RunTrace]] = {}
    for task, tr in zip(tasks, traces):
        by_key.setdefault((task[0], task[1]), []).append(tr)

    results = []
    for ci, (ki, k, m) in enumerate(cells):
        avgs = []
        for pi in range(len(cfg.policies)):
            runs = by_key[(ci, pi)]
            total = np.zeros(cfg.iters)
            for tr in runs:
                total = total + tr.phi_array()
            avgs.append(total / len(runs))
        finite = [a[~np.isnan(a)] for a in avgs]
        phi_min = float(min(a.min() for a in finite if a.size)) if any(a.size for a in finite) else math.nan
        for pi, policy in enumerate(cfg.policies):
            runs = by_key[(ci, pi)]
            try:
                fit = slope_estimate((np.arange(1, cfg.iters + 1), avgs[pi]), phi_floor=phi_min)
                slope, r2 = fit.slope, fit.r2
            except KMeansError:
                slope, r2 = None, None
            results.append(CellResult(
                m=m, k=k, policy=policy, phi0=runs[0].phi0, phi_avg=avgs[pi], phi_min=phi_min,
                slope=slope, r2=r2, c0_digest=inits[ki].digest(),
                run_seeds=[tr.seed for tr in runs], traces=runs,
            ))
    return SweepResult(cfg, results)


def _f(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v))


def emit_plots_data(result: SweepResult, out_dir, raw_traces: bool = True) -> list[Path]:
    """Write plot-ready CSVs, raw traces and a manifest; returns the paths written."""
    if not result.cells:
        raise KMeansError("empty sweep result")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for cell in result.cells:
        path = out / f"convergence_{cell.name}.csv"
        with open(path, "w") as fh:
            fh.write("t,phi_avg,phi_minus_floor,baseline\n")
            for t, phi, base in zip(cell.t, cell.phi_avg, cell.baseline):
                fh.write(f"{t},{_f(phi)},{_f(phi - cell.phi_min)},{_f(base)}\n")
        written.append(path)
        if raw_traces:
            for r, tr in enumerate(cell.traces):
                p = out / f"trace_{cell.name}_r{r}.csv"
                tr.write_csv(p)
                written.append(p)
    path = out / "slopes.csv"
    with open(path, "w") as fh:
        fh.write("m,k,policy,slope,r2,phi0,phi_min,phi_final\n")
        for c in result.cells:
            fh.write(f"{c.m},{c.k},{c.policy.label},{_f(c.slope)},{_f(c.r2)},{_f(c.phi0)},"
                     f"{_f(c.phi_min)},{_f(c.phi_avg[-1])}\n")
    written.append(path)
    path = out / "manifest.txt"
    with open(path, "w") as fh:
        fh.write(f"kmeanslab_version = {__version__}\n")
        fh.write(f"config_digest = {result.config.digest()}\n")
        fh.write(f"master_seed = {result.config.seed}\n")
        for c in result.cells:
            fh.write(f"cell.{c.name}.c0_digest = {c.c0_digest}\n")
            fh.write(f"cell.{c.name}.run_seeds = {','.join(str(s) for s in c.run_seeds)}\n")
        fh.write("# config\n")
        fh.write(result.config.canonical_text())
    written.append(path)
    return written
