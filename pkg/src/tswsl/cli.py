"""Command-line interface: ``tswsl {dist,flow,sample-trees,bench,gen-data}``.

Exit codes: 0 success, 1 data or I/O error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import sys
import time
from typing import Optional, Sequence

import numpy as np

from ._rng import derive_seed
from .distances import (
    DistanceError,
    MaxConfig,
    TswConfig,
    max_sw,
    max_tsw_sl,
    resolve_threads,
    sample_tree_batch,
    sw,
    tsw_sl,
)
from .exact_ot import OTError
from .flow import METHODS, UNSUPPORTED, FlowConfig, FlowError, default_learning_rate, run_flow, write_trace_csv
from .measures import (
    FORMATS,
    GAUSSIANS_25_BENCH,
    MeasureError,
    gen_gaussian_hd,
    gen_gaussians_25,
    gen_swiss_roll,
    read_measure,
    validate_and_normalize,
    write_measure,
)
from .splitting import SplittingError
from .tree_system import TreeRepresentation, TreeSystemError

DATASETS = ("swissroll", "gauss25", "gaussian-hd")
DATA_ERRORS = (MeasureError, TreeSystemError, SplittingError, DistanceError, OTError, FlowError, OSError)


class UsageError(Exception):
    pass


def _fmt(x: float) -> str:
    return f"{x:.12g}"


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {v}")
    return v


def _nonneg_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected an integer >= 0, got {v}")
    return v


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}")
    if not v > 0 or not np.isfinite(v):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return v


def _p_value(text: str) -> float:
    v = _positive_float(text)
    if v < 1:
        raise argparse.ArgumentTypeError("p must be >= 1")
    return v


def _root_center(text: str):
    if text in ("data-mean", "origin"):
        return text
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"root center must be data-mean, origin or v1,v2,..., got {text!r}")


def _add_tree_flags(p: argparse.ArgumentParser, trees_default: Optional[int], lines_default: int = 4) -> None:
    p.add_argument("--trees", "-L", type=_positive_int, default=trees_default,
                   help="number of tree systems (directions for sw)")
    p.add_argument("--lines", "-k", type=_positive_int, default=lines_default, help="lines per tree system")
    p.add_argument("--splitting", default="uniform", help="uniform | random | fixed:v1,...,vk")
    p.add_argument("--sampler", default="chain", help="chain or a representation such as '1;3;2,1,1'")
    p.add_argument("--root-halfwidth", type=float, default=1.0)
    p.add_argument("--step-halfwidth", type=float, default=1.0)
    p.add_argument("--threads", type=_positive_int, default=None, help="worker threads (default: $TSW_THREADS or CPUs)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tswsl", description="Tree-sliced Wasserstein distances on systems of lines.")
    sub = parser.add_subparsers(dest="command", required=True)

    d = sub.add_parser("dist", help="distance between two measures")
    d.add_argument("--mu", required=True, help="CSV or JSON measure")
    d.add_argument("--nu", required=True, help="CSV or JSON measure")
    d.add_argument("--method", choices=METHODS, default="tsw-sl")
    _add_tree_flags(d, trees_default=None)
    d.add_argument("--seed", type=_nonneg_int, default=0)
    d.add_argument("--p", type=_p_value, default=None, help="order for sw / max-sw (default 2)")
    d.add_argument("--root-center", type=_root_center, default="data-mean")
    d.add_argument("--iters", type=_positive_int, default=100, help="ascent steps of the max variants")
    d.add_argument("--lr", type=_positive_float, default=None, help="ascent step of the max variants")
    d.set_defaults(func=cmd_dist)

    f = sub.add_parser("flow", help="gradient flow from N(0, I) towards a dataset")
    f.add_argument("--dataset", choices=DATASETS, default="swissroll")
    f.add_argument("--dim", type=_positive_int, default=None, help="dimension (gaussian-hd only)")
    f.add_argument("--n", type=_positive_int, default=100, help="number of particles and target points")
    f.add_argument("--method", default="tsw-sl", help=f"one of {', '.join(METHODS)}")
    _add_tree_flags(f, trees_default=None)
    f.add_argument("--iters", type=int, default=2500)
    f.add_argument("--lr", type=_positive_float, default=None)
    f.add_argument("--checkpoints", default=None, help="comma-separated iterations (default 500,1000,...)")
    f.add_argument("--p", type=_p_value, default=2.0, help="order of the exact Wasserstein evaluation")
    f.add_argument("--sw-p", type=_p_value, default=2.0, help="order of sw / max-sw when used as the loss")
    f.add_argument("--max-iters", type=_positive_int, default=100, help="inner ascent steps (max variants)")
    f.add_argument("--max-lr", type=_positive_float, default=1e-4, help="inner ascent step (max variants)")
    f.add_argument("--fixed-trees", action="store_true", help="reuse the same tree systems every iteration")
    f.add_argument("--seed", type=_nonneg_int, default=0)
    f.add_argument("--out", default=None, help="CSV trace path (default: stdout only)")
    f.add_argument("--final", default=None, help="write the final particles as JSON/CSV")
    f.set_defaults(func=cmd_flow)

    s = sub.add_parser("sample-trees", help="sample tree systems as JSON")
    s.add_argument("--lines", "-k", type=_positive_int, default=4)
    s.add_argument("--count", type=_positive_int, default=1)
    s.add_argument("--dim", type=_positive_int, default=2)
    s.add_argument("--seed", type=_nonneg_int, default=0)
    s.add_argument("--sampler", default="chain")
    s.add_argument("--root-center", type=_root_center, default="origin")
    s.add_argument("--root-halfwidth", type=float, default=1.0)
    s.add_argument("--step-halfwidth", type=float, default=1.0)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_sample_trees)

    b = sub.add_parser("bench", help="time tsw-sl over a parameter sweep")
    b.add_argument("--sweep", action="append", default=[],
                   help="NAME=v1,v2,... with NAME in L,k,n,d; repeatable (grid product)")
    b.add_argument("--trees", "-L", type=_positive_int, default=10)
    b.add_argument("--lines", "-k", type=_positive_int, default=10)
    b.add_argument("--n", type=_positive_int, default=1000)
    b.add_argument("--dim", type=_positive_int, default=10)
    b.add_argument("--repeats", type=_positive_int, default=3)
    b.add_argument("--threads", type=_positive_int, default=None)
    b.add_argument("--seed", type=_nonneg_int, default=0)
    b.add_argument("--out", default=None)
    b.set_defaults(func=cmd_bench)

    g = sub.add_parser("gen-data", help="write a benchmark dataset")
    g.add_argument("--dataset", choices=DATASETS, required=True)
    g.add_argument("--n", type=_positive_int, default=100)
    g.add_argument("--dim", type=_positive_int, default=None)
    g.add_argument("--seed", type=_nonneg_int, default=0)
    g.add_argument("--format", choices=FORMATS, default=None)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)
    return parser


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_dist(args) -> int:
    k = args.lines
    # validate every flag before touching the data
    try:
        cfg = TswConfig(
            L=args.trees or 25, k=k, seed=args.seed, splitting=args.splitting, sampler=args.sampler,
            root_center=args.root_center, root_halfwidth=args.root_halfwidth,
            step_halfwidth=args.step_halfwidth, threads=args.threads,
        )
        cfg.splitting_map()
        mcfg = MaxConfig(
            k=k, T=args.iters, lr=args.lr or 1e-2, seed=args.seed, splitting=args.splitting,
            root_center=args.root_center, root_halfwidth=args.root_halfwidth, step_halfwidth=args.step_halfwidth,
        )
    except (DistanceError, SplittingError, TreeSystemError) as exc:
        raise UsageError(str(exc))
    mu = read_measure(args.mu)
    nu = read_measure(args.nu)
    if args.method == "tsw-sl":
        value = tsw_sl(mu, nu, cfg)
    elif args.method == "sw":
        value = sw(mu, nu, L=args.trees or 100, p=args.p or 2.0, seed=args.seed)
    else:
        if args.method == "max-sw":
            value = max_sw(mu, nu, mcfg, p=args.p or 2.0)
        else:
            value = max_tsw_sl(mu, nu, mcfg)[0]
    print(_fmt(value))
    return 0


def make_dataset(name: str, n: int, seed: int, dim: Optional[int] = None):
    """Benchmark target; ``seed`` is the master seed, hashed with the label ``dataset``."""
    ds = derive_seed(seed, "dataset")
    if name == "swissroll":
        return gen_swiss_roll(n, seed=ds)
    if name == "gauss25":
        return gen_gaussians_25(n, seed=ds, **GAUSSIANS_25_BENCH)
    if name == "gaussian-hd":
        return gen_gaussian_hd(dim or 10, n, seed=ds)
    raise UsageError(f"unknown dataset {name!r}")


def cmd_flow(args) -> int:
    if args.iters < 1:
        raise UsageError("--iters must be >= 1")
    if args.method in UNSUPPORTED or args.method not in METHODS:
        raise UsageError(f"--method must be one of {', '.join(METHODS)}")
    if args.dim is not None and args.dataset != "gaussian-hd":
        raise UsageError("--dim only applies to --dataset gaussian-hd")
    checkpoints = None
    if args.checkpoints:
        try:
            checkpoints = tuple(int(c) for c in args.checkpoints.split(","))
        except ValueError:
            raise UsageError("--checkpoints must be comma-separated integers")
    L = args.trees or (25 if args.method in ("tsw-sl", "max-tsw-sl") else 100)
    try:
        TswConfig(L=L, k=args.lines, splitting=args.splitting, sampler=args.sampler).splitting_map()
        cfg = FlowConfig(
            method=args.method, iterations=args.iters, lr=args.lr or default_learning_rate(args.method, args.dataset),
            checkpoints=checkpoints, L=L, k=args.lines, sw_p=args.sw_p, eval_p=args.p, seed=args.seed,
            splitting=args.splitting, sampler=args.sampler, root_halfwidth=args.root_halfwidth,
            step_halfwidth=args.step_halfwidth, fixed_trees=args.fixed_trees, max_T=args.max_iters,
            max_lr=args.max_lr, threads=args.threads,
        )
    except (FlowError, DistanceError, SplittingError, TreeSystemError) as exc:
        raise UsageError(str(exc))
    target = make_dataset(args.dataset, args.n, args.seed, args.dim)
    trace = run_flow(target, cfg)
    if args.out:
        write_trace_csv(trace, args.out)
    if args.final:
        write_measure(trace.final, args.final)
    print(f"{'iter':>6}  {'w_distance':>18}  {'seconds_per_iter':>16}")
    for it, wd, sec in trace.rows():
        print(f"{it:>6}  {_fmt(wd):>18}  {sec:>16.6g}")
    return 0


def cmd_sample_trees(args) -> int:
    rep = TreeRepresentation.chain(args.lines) if args.sampler == "chain" else TreeRepresentation.parse(args.sampler)
    if rep.num_lines != args.lines:
        raise UsageError(f"--sampler has {rep.num_lines} lines but --lines is {args.lines}")
    if args.root_halfwidth < 0 or args.step_halfwidth < 0:
        raise UsageError("halfwidths must be >= 0")
    if isinstance(args.root_center, list):
        center = np.asarray(args.root_center)
        if center.shape != (args.dim,):
            raise UsageError(f"--root-center needs {args.dim} values")
    else:
        # no data here, so data-mean falls back to the origin
        center = np.zeros(args.dim)
    batch = sample_tree_batch(
        [(args.seed, l) for l in range(args.count)], rep, args.dim, center, args.root_halfwidth, args.step_halfwidth
    )
    systems = []
    for b in range(args.count):
        ts = batch.system(b)
        ts.validate()
        systems.append(ts.to_dict())
    text = json.dumps({"systems": systems}, indent=1)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


BENCH_PARAMS = {"L": "trees", "k": "lines", "n": "n", "d": "dim"}


def _parse_sweep(items: Sequence[str]) -> dict[str, list[int]]:
    sweep: dict[str, list[int]] = {}
    for item in items:
        name, _, values = item.partition("=")
        name = name.strip()
        if name not in BENCH_PARAMS or not values:
            raise UsageError(f"bad --sweep {item!r}; expected NAME=v1,v2 with NAME in L,k,n,d")
        try:
            vals = [int(float(v)) for v in values.split(",")]
        except ValueError:
            raise UsageError(f"bad --sweep values in {item!r}")
        if any(v < 1 for v in vals):
            raise UsageError("sweep values must be >= 1")
        sweep[name] = vals
    return sweep


def bench_rows(sweep: dict[str, list[int]], base: dict[str, int], repeats: int, seed: int, threads: Optional[int]):
    """Best-of-``repeats`` wall time of ``tsw_sl`` for every grid point."""
    names = list(BENCH_PARAMS)
    grids = [sweep.get(nm, [base[nm]]) for nm in names]
    for values in itertools.product(*grids):
        p = dict(zip(names, values))
        rng = np.random.default_rng([derive_seed(seed, "bench"), p["n"], p["d"]])
        mu = validate_and_normalize(rng.standard_normal((p["n"], p["d"])))
        nu = validate_and_normalize(rng.standard_normal((p["n"], p["d"])) + 1.0)
        cfg = TswConfig(L=p["L"], k=p["k"], seed=seed, threads=threads)
        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            tsw_sl(mu, nu, cfg)
            best = min(best, time.perf_counter() - t0)
        yield {**p, "seconds": best}


def cmd_bench(args) -> int:
    sweep = _parse_sweep(args.sweep)
    base = {"L": args.trees, "k": args.lines, "n": args.n, "d": args.dim}
    threads = resolve_threads(args.threads)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(["L", "k", "n", "d", "threads", "seconds"])
        for row in bench_rows(sweep, base, args.repeats, args.seed, threads):
            w.writerow([row["L"], row["k"], row["n"], row["d"], threads, f"{row['seconds']:.6g}"])
            out.flush()
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_gen_data(args) -> int:
    if args.dim is not None and args.dataset != "gaussian-hd":
        raise UsageError("--dim only applies to --dataset gaussian-hd")
    write_measure(make_dataset(args.dataset, args.n, args.seed, args.dim), args.out, args.format)
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on flag errors
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"tswsl {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except DATA_ERRORS as exc:
        print(f"tswsl {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
