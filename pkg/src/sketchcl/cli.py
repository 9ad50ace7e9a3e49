"""Command-line entry point: ``sketchcl <subcommand> [flags]``.

Exit codes: 0 success, 1 a verification check failed, 2 usage error,
3 I/O error (missing data, unwritable output).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataio, theory
from .dataio import ExperimentConfig, ResultRow
from .errors import InvalidArgumentError
from .models import LinearFeatureMap, RandomReluFeatures, TwoLayerRelu
from .regularizers import EWC, L2, Variant, memory_cost
from .rng import DATA_STREAM, FEATURE_STREAM, PERMUTATION_STREAM, derive_seed, make_rng
from .tasks import hypercube_means, incremental_split, permuted_task
from .theory import gmm, regression
from .trainer import TrainConfig, run_joint_sequence, run_sequence

log = logging.getLogger("sketchcl")

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3
ALL_DATA = "all-data"
DEFAULT_METHODS = {
    "permuted": [ALL_DATA, "ewc", "l2", "rsj-100", "rsj-400"],
    "incremental": [ALL_DATA, "ewc", "rsj-50", "rsj-100", "rsj-800"],
    "memory-report": ["full", "rsj-100", "rsj-400", "ewc", "l2"],
}
DEFAULT_SUBSAMPLE = 10_000
LAMBDA_GRID = (0.1, 1.0, 10.0)


class UsageError(Exception):
    pass


def _int_list(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def _pairs(text):
    """``"0,1;2,3"`` or ``"0,1"`` -> list of class groups."""
    return [_int_list(g) for g in str(text).split(";") if g.strip()]


def _scales(text):
    out = {}
    for item in str(text).split(","):
        if item.strip():
            name, _, value = item.partition("=")
            out[name.strip()] = float(value)
    return out


def expand_methods(methods, s_values):
    """Normalise method names; bare ``rsj`` expands to one entry per ``--s`` value."""
    out = []
    for m in methods:
        m = m.strip().lower()
        if m in ("all-data", "joint", "alldata"):
            out.append(ALL_DATA)
        elif m in ("rsj", "sketch"):
            if not s_values:
                raise UsageError("method 'rsj' needs --s")
            out += [f"rsj-{s}" for s in s_values]
        else:
            try:
                out.append(Variant.parse(m).name)
            except InvalidArgumentError as exc:
                raise UsageError(str(exc)) from None
    return list(dict.fromkeys(out))


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("common")
    g.add_argument("--config", help="JSON config file; flags override its values")
    g.add_argument("--method", "--methods", dest="methods", action="append",
                   help="comma-separated methods: all-data, ewc, l2, full, rsj-<s>, rsj")
    g.add_argument("--s", dest="s", type=_int_list, help="sketch sizes for a bare 'rsj'")
    g.add_argument("--lambda", dest="lam", type=float, help="penalty weight")
    g.add_argument("--tasks", dest="num_tasks", type=int)
    g.add_argument("--model", choices=["random-features", "two-layer", "linear"])
    g.add_argument("--num-features", type=int)
    g.add_argument("--hidden-units", type=int)
    g.add_argument("--group-scales", type=_scales, help="e.g. W1=1,b1=10")
    g.add_argument("--seed", type=int)
    g.add_argument("--num-seeds", type=int)
    g.add_argument("--data-dir")
    g.add_argument("--out")
    g.add_argument("--format", choices=["csv", "json", "dat"])
    g.add_argument("--deterministic", action="store_true", default=None)
    g.add_argument("--subsample", type=int)
    g.add_argument("--full", action="store_true", help="full-size data (no subsampling)")
    g.add_argument("--max-iters", type=int)
    g.add_argument("--stepsize", type=float)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--pairs", type=_pairs, help='class groups, e.g. "0,1;2,3"')
    g.add_argument("--only", action="append", help="verify-theory: checks to run")
    g.add_argument("--bound-scale", type=float, default=1.0,
                   help="debug: multiply every checked bound (negative control)")
    g.add_argument("--p", dest="p", type=int, help="memory-report: parameter count")
    g.add_argument("--n", dest="n", type=int, help="memory-report: examples per task")
    g.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="sketchcl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in [
        ("permuted", "sequential training on pixel-permuted MNIST tasks"),
        ("incremental", "sequential training on class-pair MNIST tasks"),
        ("regression-sim", "Gaussian regression error scaling in n, s and task count"),
        ("gmm", "lambda sweeps for EWC and L2 on two-task Gaussian mixtures"),
        ("verify-theory", "run the numerical checks and report pass/fail"),
        ("memory-report", "reals stored by each penalty variant"),
    ]:
        sub.add_parser(name, parents=[common], help=text)
    return parser


def resolve_config(args) -> ExperimentConfig:
    """Defaults, then the config file, then explicit flags."""
    cfg = ExperimentConfig(experiment=args.command)
    if args.command in DEFAULT_METHODS:
        cfg.methods = list(DEFAULT_METHODS[args.command])
    if args.command == "incremental":
        cfg.num_tasks = 5
        cfg.pairs = [[2 * i, 2 * i + 1] for i in range(5)]
    if args.command == "regression-sim":
        cfg.num_tasks = 5
    if args.command in ("permuted", "incremental"):
        cfg.subsample = DEFAULT_SUBSAMPLE
    if args.config:
        loaded = ExperimentConfig.load(args.config)
        loaded.experiment = args.command
        cfg = loaded
    if args.methods:
        cfg.methods = expand_methods([m for group in args.methods for m in group.split(",")],
                                     args.s)
    flag_map = {"lam": "lam", "num_tasks": "num_tasks", "model": "model",
                "num_features": "num_features", "hidden_units": "hidden_units",
                "group_scales": "group_scales", "data_dir": "data_dir", "out": "out",
                "format": "format", "deterministic": "deterministic", "subsample": "subsample",
                "max_iters": "max_iters", "stepsize": "stepsize", "batch_size": "batch_size",
                "pairs": "pairs"}
    for flag, key in flag_map.items():
        value = getattr(args, flag)
        if value is not None:
            setattr(cfg, key, value)
    if args.pairs is not None and args.num_tasks is None:
        cfg.num_tasks = len(args.pairs)
    if args.seed is not None or args.num_seeds is not None:
        base = args.seed if args.seed is not None else (cfg.seeds[0] if cfg.seeds else 0)
        cfg.seeds = list(range(base, base + (args.num_seeds or 1)))
    if args.full:
        cfg.subsample = None
    if args.lam is not None:
        cfg.extra["tune_lambda"] = False
    if args.s:
        cfg.extra["s"] = list(args.s)
    if args.only:
        cfg.extra["only"] = [c for group in args.only for c in group.split(",")]
    if args.bound_scale != 1.0:
        cfg.extra["bound_scale"] = args.bound_scale
    for key in ("p", "n"):
        if getattr(args, key) is not None:
            cfg.extra[key] = getattr(args, key)
    if cfg.num_tasks < 1:
        raise UsageError("--tasks must be >= 1")
    return cfg


# ----------------------------------------------------------------- experiments

def build_model(cfg: ExperimentConfig, d, q, seed):
    if cfg.model == "random-features":
        m = cfg.num_features or 6 * d
        return RandomReluFeatures.draw(d, m, q, make_rng(seed, FEATURE_STREAM))
    if cfg.model == "two-layer":
        return TwoLayerRelu.experimental(d, cfg.hidden_units, q)
    if cfg.model == "linear":
        return LinearFeatureMap(d, num_outputs=q)
    raise UsageError(f"unknown model {cfg.model!r}")


def train_config(cfg: ExperimentConfig, seed, lam=None):
    return TrainConfig(stepsize=cfg.stepsize, max_iters=cfg.max_iters,
                       lam=cfg.lam if lam is None else lam, grad_tol=cfg.grad_tol,
                       batch_size=cfg.batch_size, seed=seed)


def select_lambda(model, tasks, variant, cfg, seed, grid=LAMBDA_GRID):
    """Pick lambda for a diagonal penalty on a held-out fifth of the first two tasks."""
    if len(tasks) < 2:
        return cfg.lam
    fit, held = [], []
    for k, task in enumerate(tasks[:2]):
        order = make_rng(seed, DATA_STREAM, 211, k).permutation(task.n)
        cut = max(1, int(0.8 * task.n))
        fit.append(task.subset(order[:cut]))
        held.append(task.subset(order[cut:]) if cut < task.n else task)
    scores = []
    for lam in grid:
        res = run_sequence(model, fit, variant, train_config(cfg, seed, lam), held,
                           cfg.group_scales or None)
        scores.append(res.rows[-1]["value"])
    best = float(grid[int(np.argmax(scores))])
    log.info("%s: lambda %g selected from %s (held-out %s)", variant.name, best, grid, scores)
    return best


def run_methods(cfg: ExperimentConfig, tasks_for_seed):
    """Run every configured method for every seed; ``tasks_for_seed(seed)`` gives (train, test)."""
    rows = []
    chash = cfg.config_hash()
    for seed in cfg.seeds:
        tasks, tests = tasks_for_seed(seed)
        model = build_model(cfg, tasks[0].d, tasks[0].q, seed)
        for method in cfg.methods:
            if method == ALL_DATA:
                res, lam, s = run_joint_sequence(model, tasks, train_config(cfg, seed), tests), 0.0, None
            else:
                variant = Variant.parse(method)
                lam = cfg.lam
                if variant.kind in (EWC, L2) and cfg.extra.get("tune_lambda", True):
                    lam = select_lambda(model, tasks, variant, cfg, seed)
                res = run_sequence(model, tasks, variant, train_config(cfg, seed, lam), tests,
                                   cfg.group_scales or None)
                s = variant.s
            for r in res.rows:
                rows.append(ResultRow(cfg.experiment, r["task_index"], method, r["value"],
                                      r["metric"], s, lam, seed, int(r["memory_cost"]),
                                      0.0 if cfg.deterministic else r["wall_time"], chash))
    return rows


def cmd_permuted(cfg: ExperimentConfig):
    train, test = dataio.load_mnist(cfg.data_dir, cfg.subsample, cfg.seeds[0])

    def tasks_for_seed(seed):
        perms = ["identity"] + [derive_seed(seed, PERMUTATION_STREAM, t) for t in range(1, cfg.num_tasks)]
        return ([permuted_task(train, p) for p in perms], [permuted_task(test, p) for p in perms])

    return run_methods(cfg, tasks_for_seed)


def cmd_incremental(cfg: ExperimentConfig):
    train, test = dataio.load_mnist(cfg.data_dir, cfg.subsample, cfg.seeds[0])
    pairs = cfg.pairs[:cfg.num_tasks]
    split_train, split_test = incremental_split(train, pairs), incremental_split(test, pairs)
    return run_methods(cfg, lambda seed: (split_train, split_test))


def cmd_regression_sim(cfg: ExperimentConfig):
    seeds = cfg.seeds if len(cfg.seeds) > 1 else range(cfg.seeds[0], cfg.seeds[0] + 10)
    scaling = regression.regression_scaling_check(seeds=seeds)
    s = (cfg.extra.get("s") or [20])[0]
    acc = regression.multitask_accumulation(num_tasks=max(cfg.num_tasks, 3), s=s, seeds=seeds)
    print(f"# joint error slope in n: {scaling.joint_slope:.4f}")
    print(f"# sketch deviation slope in s: {scaling.sketch_slope:.4f}")
    print(f"# sketched/joint error at n={scaling.compare_n}, s={scaling.compare_s}: "
          f"{scaling.compare_ratio:.4f}")
    print("# gap after each task: " + " ".join(f"{g:.4g}" for g in acc.gaps))
    return scaling.rows() + acc.rows()


def cmd_gmm(cfg: ExperimentConfig):
    seed = cfg.seeds[0]
    grid = gmm.DEFAULT_GRID
    records = []
    mu_A, mu_B = hypercube_means(16, seed)
    d = 16
    e = np.ones(d) / np.sqrt(d)
    f = e.copy()
    f[d // 2:] *= -1
    instances = [("hypercube", mu_A, mu_B, 0.3), ("orthogonal", e, f, 0.3)]
    search = gmm.failure_sigma_search(grid=grid)
    a, b = gmm.failure_instance_means()
    instances.append(("failure", a, b, search.sigma or min(gmm.FAILURE_SIGMAS)))
    for name, ma, mb, sigma in instances:
        for method in (gmm.EWC, gmm.L2):
            sw = gmm.gmm_lambda_sweep(method, ma, mb, sigma, grid, refine=name != "failure")
            print(f"# {name} {method}: sigma={sigma:g} lambda*={sw.lam_star:.6g} "
                  f"ratio={sw.ratio:.6g} cosine={sw.best_cosine:.8f}")
            records += [dict(instance=name, **r) for r in sw.rows()]
    return records


def cmd_verify_theory(cfg: ExperimentConfig):
    reports = theory.run_checks(cfg.extra.get("only"), cfg.seeds[0], cfg.extra.get("bound_scale", 1.0))
    for rep in reports:
        print("# " + rep.line() + ("" if cfg.deterministic else f" ({rep.seconds:.1f}s)"))
    return reports


def cmd_memory_report(cfg: ExperimentConfig):
    p = cfg.extra.get("p", 6 * 784 * 10)
    n = cfg.extra.get("n", 60_000)
    records = []
    for method in cfg.methods:
        if method == ALL_DATA:
            continue
        v = Variant.parse(method)
        for k in range(1, cfg.num_tasks + 1):
            records.append({"method": v.name, "tasks": k, "p": p, "n": n,
                            "memory_cost": memory_cost(v, p, k, n=n)})
    return records


COMMANDS = {
    "permuted": cmd_permuted,
    "incremental": cmd_incremental,
    "regression-sim": cmd_regression_sim,
    "gmm": cmd_gmm,
    "verify-theory": cmd_verify_theory,
    "memory-report": cmd_memory_report,
}


def emit(cfg: ExperimentConfig, output):
    """Write ``output`` to ``cfg.out`` (or stdout) in the chosen format."""
    if not output:
        return
    if isinstance(output[0], ResultRow):
        text = dataio.format_results(output, cfg.format)
    else:
        if isinstance(output[0], theory.TheoryReport):
            output = [r.row() for r in output]
        records = [dict(config_hash=cfg.config_hash(), **r) for r in output]
        # the wide layout only makes sense for per-task result rows
        text = dataio.format_records(records, "csv" if cfg.format == "dat" else cfg.format)
    if cfg.out:
        Path(cfg.out).write_text(text)
        print(f"# wrote {cfg.out}")
    else:
        sys.stdout.write(text)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        print("# resolved config (hash %s):" % cfg.config_hash())
        for line in cfg.to_json().splitlines():
            print("# " + line)
        output = COMMANDS[args.command](cfg)
        emit(cfg, output)
    except (UsageError, InvalidArgumentError) as exc:
        print(f"sketchcl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"sketchcl: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    if args.command == "verify-theory" and not all(r.passed for r in output):
        failed = [r.name for r in output if not r.passed]
        print(f"sketchcl: failed checks: {', '.join(failed)}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
