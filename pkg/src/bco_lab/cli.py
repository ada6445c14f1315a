"""Command line entry point: ``bco-lab run | verify | bench``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .analysis import diagnostic_suite
from .harness import ConfigError, emit_csv, load_config, parse_bool, run_experiment, runtime_rows, write_runtime_csv

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; usage problems are config errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _bool_flag(text):
    try:
        return parse_bool(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_run_flags(p):
    p.add_argument("config", nargs="?", help="key = value config file")
    p.add_argument("--experiment", choices=("quadratic", "portfolio", "matrix_completion"))
    p.add_argument("--algos", help="comma-separated subset of pfbco,fkm,unregularized,stochocg")
    p.add_argument("--n", type=int)
    p.add_argument("--t", type=int, dest="T")
    p.add_argument("--reps", type=int, dest="repetitions")
    p.add_argument("--seed", type=int, dest="base_seed")
    p.add_argument("--anytime", type=_bool_flag, nargs="?", const=True, metavar="BOOL")
    p.add_argument("--out")


def build_parser():
    parser = _Parser(prog="bco-lab", description="Projection-free bandit convex optimization experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    run = sub.add_parser("run", help="run an experiment and write trace, summary and runtime CSVs")
    _add_run_flags(run)
    bench = sub.add_parser("bench", help="run an experiment and print only the runtime table")
    _add_run_flags(bench)
    verify = sub.add_parser("verify", help="run the numerical checks and print pass/fail lines")
    verify.add_argument("--n", type=int, default=5)
    verify.add_argument("--t", type=int, dest="T", default=200)
    verify.add_argument("--seed", type=int, default=0)
    return parser


def _config_from(args):
    overrides = {
        "experiment": args.experiment,
        "algorithms": args.algos,
        "n": args.n,
        "T": args.T,
        "repetitions": args.repetitions,
        "base_seed": args.base_seed,
        "anytime": args.anytime,
        "out": args.out,
    }
    return load_config(args.config, **overrides)


def _print_runtime(traces, out=None):
    out = sys.stdout if out is None else out
    print(f"{'algorithm':<14} {'runs':>5} {'total_s':>10} {'relative':>9}", file=out)
    for name, runs, total, _, rel in runtime_rows(traces):
        print(f"{name:<14} {runs:>5} {total / 1e9:>10.3f} {rel:>9.3f}", file=out)


def _cmd_run(args, bench=False):
    cfg = _config_from(args)
    traces = run_experiment(cfg)
    out = Path(cfg.out)
    if bench:
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"{cfg.experiment}_runtime.csv"
        write_runtime_csv(traces, path)
        _print_runtime(traces)
        return EXIT_OK
    paths = emit_csv(traces, out / f"{cfg.experiment}.csv")
    for name in cfg.algorithms:
        group = [tr for tr in traces if tr.algorithm == name]
        avg = sum(float(tr.cum_loss_y[-1]) for tr in group) / (len(group) * cfg.T)
        print(f"{name:<14} mean average loss {avg:.6g} over {len(group)} runs")
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    return EXIT_OK


def _cmd_verify(args):
    report = diagnostic_suite(n=args.n, T=args.T, seed=args.seed)
    for line in report.lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_RUNTIME


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    try:
        if args.command == "verify":
            return _cmd_verify(args)
        return _cmd_run(args, bench=args.command == "bench")
    except ConfigError as exc:
        print(f"bco-lab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any failure during a run maps to exit 2
        print(f"bco-lab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
