"""Command-line interface: ``prox-evi run | sweep-eta | eval``."""

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .benchmarks import REGISTRY, get_benchmark
from .domains import Disk, Interval
from .errors import TrainingError
from .network import load_checkpoint, predict
from .trainer import (
    RunConfig,
    read_config,
    relative_errors,
    run,
    write_solution,
)

EXIT_OK, EXIT_USAGE, EXIT_ABORT = 0, 2, 3
DEFAULT_ETAS = (1e-2, 1e-3, 1e-4, 1e-5)
log = logging.getLogger("prox_evi")


class UsageError(Exception):
    pass


def output_root():
    return Path(os.environ.get("PROX_EVI_OUT", "runs"))


def _param(text):
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        return key, float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"value of {key!r} must be a number") from None


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def _add_run_flags(p):
    p.add_argument("--benchmark", required=True, help=f"one of: {', '.join(REGISTRY)}")
    p.add_argument("--param", action="append", type=_param, default=[], metavar="KEY=VALUE",
                   help="benchmark constant, e.g. c=4 for torsion2d or tau=1.5 for bingham2d")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=_positive_int)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--loss-variant", choices=("hard", "soft", "shrink", "primal"))
    p.add_argument("--train-size", type=_positive_int)
    p.add_argument("--test-size", type=_positive_int)
    p.add_argument("--boundary-size", type=_positive_int)
    p.add_argument("--log-every", type=_positive_int, default=100)
    p.add_argument("--batch-size", type=_positive_int)
    p.add_argument("--out", help="output directory (default: $PROX_EVI_OUT/<benchmark>-s<seed>)")


def build_parser():
    parser = argparse.ArgumentParser(prog="prox-evi", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train one benchmark")
    _add_run_flags(p)
    p.add_argument("--eta", type=float, default=1e-3)

    p = sub.add_parser("sweep-eta", help="train one benchmark for several values of eta")
    _add_run_flags(p)
    p.add_argument("--etas", default=",".join(f"{e:g}" for e in DEFAULT_ETAS),
                   help="comma-separated list (default: %(default)s)")
    p.add_argument("--jobs", type=_positive_int, default=1)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a uniform grid")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", help="config.json of the run (default: next to the checkpoint)")
    p.add_argument("--grid", type=_positive_int, required=True, help="points per axis")
    p.add_argument("--out", help="output directory (default: <checkpoint dir>/eval-N<grid>)")
    return parser


def config_from_args(args, eta):
    if args.benchmark not in REGISTRY:
        raise UsageError(f"unknown benchmark {args.benchmark!r}; choose from {', '.join(REGISTRY)}")
    try:
        config = RunConfig(
            benchmark=args.benchmark,
            params=dict(args.param),
            seed=args.seed,
            epochs=args.epochs,
            eta=eta,
            lr=args.lr,
            loss_variant=args.loss_variant,
            train_size=args.train_size,
            test_size=args.test_size,
            boundary_size=args.boundary_size,
            log_every=args.log_every,
            batch_size=args.batch_size,
        )
        return config.resolve()
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _default_out(config):
    return output_root() / f"{config.benchmark}-s{config.seed}"


def _execute(config):
    """Run in this process or a worker; returns (eta, l2, linf) or raises TrainingError."""
    result = run(config)
    final = result.log.final
    return config.eta, final.l2_rel, final.linf_rel


def cmd_run(args):
    config = config_from_args(args, args.eta)
    out = Path(args.out) if args.out else _default_out(config)
    config = replace(config, out_dir=str(out))
    _, l2, linf = _execute(config)
    print(f"{config.benchmark}: relative L2 error {l2:.4e}, relative Linf error {linf:.4e}")
    print(f"outputs written to {out}")
    return EXIT_OK


def _parse_etas(text):
    try:
        etas = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"--etas must be a comma-separated list of numbers, got {text!r}") from None
    if not etas or any(not e > 0 for e in etas):
        raise UsageError("--etas needs at least one positive value")
    return etas


def cmd_sweep_eta(args):
    etas = _parse_etas(args.etas)
    base = config_from_args(args, etas[0])
    if get_benchmark(base.benchmark, **base.params).case != "case1":
        raise UsageError(f"{base.benchmark} is not an obstacle problem; the eta sweep needs one")
    root = Path(args.out) if args.out else output_root() / f"{base.benchmark}-eta-sweep-s{base.seed}"
    configs = [replace(base, eta=eta, out_dir=str(root / f"eta-{eta:g}")) for eta in etas]
    if args.jobs > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_execute, configs))
    else:
        rows = [_execute(c) for c in configs]
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "summary.csv", "w") as fh:
        fh.write("eta,l2_rel,linf_rel\n")
        for eta, l2, linf in rows:
            fh.write(f"{eta!r},{l2!r},{linf!r}\n")
    print(f"{'eta':>8}  {'rel. L2':>11}  {'rel. Linf':>11}")
    for eta, l2, linf in rows:
        print(f"{eta:>8.0e}  {l2:>11.4e}  {linf:>11.4e}")
    return EXIT_OK


def eval_grid(domain, n):
    """``n`` points in 1-D, an ``n x n`` grid in 2-D (restricted to the disk for disks)."""
    if isinstance(domain, Interval) and n == 1:
        return np.array([[0.5 * (domain.a + domain.b)]])
    if n == 1:
        center = (domain.cx, domain.cy) if isinstance(domain, Disk) else (
            0.5 * (domain.a + domain.b), 0.5 * (domain.c + domain.d))
        return np.array([center])
    return domain.test_grid(n)


def evaluate_checkpoint(checkpoint, config, n):
    """Forward pass only: returns (points, exact, predicted, absolute Linf, relative errors)."""
    bench = get_benchmark(config.benchmark, **config.params)
    net = load_checkpoint(checkpoint)
    surrogate = bench.make_surrogate(net, config.loss_variant)
    pts = eval_grid(bench.domain, n)
    exact = bench.exact(pts)
    pred = predict(surrogate, pts)
    return pts, exact, pred, float(np.max(np.abs(exact - pred))), relative_errors(pred, exact)


def cmd_eval(args):
    checkpoint = Path(args.checkpoint)
    if not checkpoint.is_file():
        raise UsageError(f"checkpoint {checkpoint} does not exist")
    config_path = Path(args.config) if args.config else checkpoint.parent / "config.json"
    if not config_path.is_file():
        raise UsageError(f"config {config_path} does not exist")
    try:
        config = read_config(config_path).resolve()
        pts, exact, pred, abs_inf, errs = evaluate_checkpoint(checkpoint, config, args.grid)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out) if args.out else checkpoint.parent / f"eval-N{args.grid}"
    out.mkdir(parents=True, exist_ok=True)
    write_solution(out / "solution.csv", pts, exact, pred)
    summary = {"grid": args.grid, "points": len(pts), "linf_abs": abs_inf,
               "l2_rel": errs.l2, "linf_rel": errs.linf, "absolute_norms": errs.absolute}
    with open(out / "errors.json", "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    print(f"N={args.grid}: {len(pts)} points, max abs error {abs_inf:.4e}, "
          f"relative L2 {errs.l2:.4e}, relative Linf {errs.linf:.4e}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "sweep-eta": cmd_sweep_eta, "eval": cmd_eval}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"prox-evi: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingError as exc:
        print(f"prox-evi: training aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
