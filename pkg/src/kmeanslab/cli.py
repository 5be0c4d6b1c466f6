"""Command-line entry point.

Exit status: 0 on success, 1 on invalid arguments or configuration, 2 when
a file cannot be read or written.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .batch import enumerate_stationary, is_stationary, lloyd_run
from .core import (
    KMeansError,
    assign,
    means,
    read_centroids,
    read_clustering,
    voronoi_cost,
    write_centroids,
    write_clustering,
)
from .dataset import DatasetError, describe, generate_clusterable, guess_format, load_sparse, write_sparse
from .experiment import ConfigError, emit_plots_data, load_config, load_dataset, run_sweep
from .seeding import seed_buckshot, seed_random
from .stochastic import LearningRatePolicy, StochasticConfig, run
from .theory import check_assumptions, stability_probe

log = logging.getLogger("kmeanslab")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _global_options(parser, suppress: bool):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default if suppress else 0,
                        help="master RNG seed")
    parser.add_argument("--threads", type=int, default=default if suppress else 1,
                        help="worker threads for sweeps")
    parser.add_argument("--config", default=default, help="key = value experiment config file")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    _global_options(common, suppress=True)

    p = _Parser(prog="kmeanslab", description=__doc__.splitlines()[0])
    _global_options(p, suppress=False)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def data_args(sp, required=False):
        sp.add_argument("--dataset", required=required, help="svmlight or CSV file")
        sp.add_argument("--format", choices=["svmlight", "csv"], default=None)
        sp.add_argument("--normalize", action="store_true", help="scale rows to unit L2 norm")

    def seed_args(sp):
        sp.add_argument("--k", type=int, required=True)
        sp.add_argument("--init", help="initial centroids CSV (overrides seeding)")
        sp.add_argument("--seeding", choices=["random-points", "buckshot"], default="random-points")
        sp.add_argument("--m0", type=int, default=None, help="buckshot sample size")

    fit = sub.add_parser("fit", parents=[common], help="single stochastic k-means run")
    data_args(fit)
    seed_args(fit)
    fit.add_argument("--m", type=int, default=1, help="mini-batch size")
    fit.add_argument("--policy", choices=["flat", "bbs"], default="flat")
    fit.add_argument("--c-prime", type=float, default=2.0)
    fit.add_argument("--t0", type=float, default=3.0)
    fit.add_argument("--iters", type=int, default=100)
    fit.add_argument("--cost-every", type=int, default=1)
    fit.add_argument("--tol", type=float, default=1e-6, help="relative improvement stop; <0 disables")
    fit.add_argument("--trace-out")
    fit.add_argument("--centroids-out")

    batch = sub.add_parser("batch", parents=[common], help="batch k-means (Lloyd)")
    data_args(batch)
    seed_args(batch)
    batch.add_argument("--max-iters", type=int, default=300)
    batch.add_argument("--centroids-out")
    batch.add_argument("--clustering-out")
    batch.add_argument("--trace-out")

    sd = sub.add_parser("seed", parents=[common], help="emit initial centers")
    data_args(sd)
    seed_args(sd)
    sd.add_argument("--out")

    sw = sub.add_parser("sweep", parents=[common], help="run a configured sweep")
    sw.add_argument("--out-dir", help="override out_dir from the config")

    ver = sub.add_parser("verify", parents=[common], help="clusterability diagnostics for a solution")
    data_args(ver)
    ver.add_argument("--solution", required=True, help="centroids CSV")
    ver.add_argument("--clustering", help="cluster ids file (default: Voronoi assignment)")
    ver.add_argument("--alpha", type=float, default=0.01)
    ver.add_argument("--probe-trials", type=int, default=0)
    ver.add_argument("--b0", type=float, default=1.0)

    en = sub.add_parser("enumerate", parents=[common], help="all stationary clusterings (tiny inputs)")
    data_args(en)
    en.add_argument("--k", type=int, required=True)

    gen = sub.add_parser("generate", parents=[common], help="write the configured synthetic instance")
    gen.add_argument("--out-dir", required=True)
    return p


def _dataset(args, cfg):
    if getattr(args, "dataset", None):
        path = args.dataset
        if not Path(path).exists():
            raise FileNotFoundError(path)
        ds = load_sparse(path, args.format or guess_format(path))
        return ds.normalized() if args.normalize else ds
    if cfg is not None:
        return load_dataset(cfg)
    raise UsageError("no dataset: pass --dataset or a --config with dataset/synthetic keys")


def _initial(args, ds, rng):
    if args.init:
        return read_centroids(args.init)
    if args.seeding == "buckshot":
        if args.m0 is None:
            raise UsageError("--seeding buckshot needs --m0")
        return seed_buckshot(ds, args.k, args.m0, rng)
    return seed_random(ds, args.k, rng)


def _cmd_fit(args, cfg):
    ds = _dataset(args, cfg)
    rng = np.random.default_rng(args.seed)
    C0 = _initial(args, ds, rng)
    policy = LearningRatePolicy(args.policy, args.c_prime, args.t0)
    scfg = StochasticConfig(m=args.m, policy=policy, max_iters=args.iters, seed=args.seed,
                            cost_eval_every=args.cost_every,
                            tol=None if args.tol < 0 else args.tol)
    C, trace = run(ds, C0, scfg)
    if args.trace_out:
        trace.write_csv(args.trace_out)
    if args.centroids_out:
        write_centroids(C, args.centroids_out)
    print(f"iterations = {len(trace)}")
    print(f"stopped = {trace.stopped_reason}")
    print(f"phi0 = {trace.phi0!r}")
    print(f"phi = {voronoi_cost(ds, C)!r}")


def _cmd_batch(args, cfg):
    ds = _dataset(args, cfg)
    C0 = _initial(args, ds, np.random.default_rng(args.seed))
    res = lloyd_run(ds, C0, args.max_iters)
    if args.centroids_out:
        write_centroids(res.final_centroids, args.centroids_out)
    if args.clustering_out:
        write_clustering(res.final_clustering, args.clustering_out)
    if args.trace_out:
        res.trace.write_csv(args.trace_out)
    print(f"iterations = {len(res.trace)}")
    print(f"stopped = {res.stopped_reason}")
    print(f"phi = {res.trace.phi[-1]!r}" if len(res.trace) else f"phi = {res.trace.phi0!r}")
    for ev in res.trace.events:
        print(f"event = {ev}")


def _cmd_seed(args, cfg):
    ds = _dataset(args, cfg)
    C = _initial(args, ds, np.random.default_rng(args.seed))
    if args.out:
        write_centroids(C, args.out)
    else:
        for row in C.centers:
            print(",".join(repr(float(v)) for v in row))


def _cmd_sweep(args, cfg):
    if cfg is None:
        raise UsageError("sweep needs --config")
    if "seed" in args.explicit:
        cfg.seed = args.seed
    if args.out_dir:
        cfg.out_dir = args.out_dir
    result = run_sweep(cfg, threads=max(1, args.threads))
    files = emit_plots_data(result, cfg.out_dir)
    for c in result.cells:
        slope = "" if c.slope is None else f"{c.slope:.4f}"
        r2 = "" if c.r2 is None else f"{c.r2:.4f}"
        print(f"m={c.m} k={c.k} policy={c.policy.label} slope={slope} r2={r2} phi_final={float(c.phi_avg[-1])!r}")
    print(f"wrote {len(files)} files to {cfg.out_dir}")


def _cmd_verify(args, cfg):
    ds = _dataset(args, cfg)
    C = read_centroids(args.solution)
    if args.clustering:
        A = read_clustering(args.clustering, C.k)
    else:
        A, _ = assign(ds, C)
    C = means(ds, A, previous=C)
    stationary, boundary = is_stationary(ds, A)
    print(f"stationary = {stationary}")
    print(f"boundary = {boundary}")
    report = check_assumptions(ds, A, C, args.alpha)
    sys.stdout.write(report.to_text())
    if args.probe_trials > 0:
        probe = stability_probe(ds, A, C, args.b0, args.probe_trials, seed=args.seed,
                                assumptions=report)
        sys.stdout.write(probe.to_text())


def _cmd_enumerate(args, cfg):
    ds = _dataset(args, cfg)
    found = enumerate_stationary(ds, args.k)
    print(f"stationary_clusterings = {len(found)}")
    for A, C in found:
        groups = " | ".join(",".join(map(str, g)) for g in A.canonical())
        print(f"{voronoi_cost(ds, C)!r}\t{groups}")


def _cmd_generate(args, cfg):
    if cfg is None or cfg.synthetic is None:
        raise UsageError("generate needs a --config with synthetic.* keys")
    ds, planted, A = generate_clusterable(cfg.synthetic)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_sparse(ds, out / "planted.svm")
    write_centroids(planted, out / "planted_centers.csv")
    write_centroids(means(ds, A), out / "planted_centroids.csv")
    write_clustering(A, out / "planted_clustering.txt")
    s = describe(ds)
    print(f"n = {s.n}\nd = {s.dim}\nwrote {out}")


COMMANDS = {
    "fit": _cmd_fit,
    "batch": _cmd_batch,
    "seed": _cmd_seed,
    "sweep": _cmd_sweep,
    "verify": _cmd_verify,
    "enumerate": _cmd_enumerate,
    "generate": _cmd_generate,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"kmeanslab: error: {exc}", file=sys.stderr)
        return 1
    args.explicit = {a.lstrip("-").split("=")[0] for a in argv if a.startswith("--")}
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        cfg = load_config(args.config) if args.config else None
        COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError, KMeansError, DatasetError) as exc:
        print(f"kmeanslab: error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"kmeanslab: file not found: {exc.filename or exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"kmeanslab: I/O error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
