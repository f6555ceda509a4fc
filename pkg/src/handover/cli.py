"""Command line entry point.

Exit status: 0 success, 2 usage or configuration error, 3 unreadable or
malformed input, 4 empty input, 5 degenerate statistics (the report is
still written), 6 unwritable output.
"""

from __future__ import annotations

import argparse
import sys

from . import runner
from .kvconfig import ConfigError

EXIT_OK = 0
EXIT_CONFIG = 2


def _run(args) -> int:
    overrides = {"seed": args.seed} if args.seed is not None else {}
    if args.participants is not None:
        overrides["participants"] = args.participants
    cfg = runner.load_preset(args.config, **overrides)
    rows = runner.run(cfg, args.out, parallel=args.parallel)
    n_practice = sum(r["practice"] == "1" for r in rows)
    print(f"experiment {cfg.experiment}: {len(rows) - n_practice} trials + {n_practice} practice -> {args.out}")
    return EXIT_OK


def _analyze(args) -> int:
    rows, text = runner.analyze(args.inp, args.out)
    print(text, end="")
    return EXIT_OK


def _stats(args) -> int:
    outcome = runner.stats(args.inp, args.experiment, args.out)
    bad = outcome.degenerate
    if bad:
        print(f"degenerate statistics for: {', '.join(bad)}", file=sys.stderr)
        return runner.DegenerateError.code
    print(f"{len(outcome.reports)} tests -> {args.out}")
    return EXIT_OK


def _report(args) -> int:
    summary, _ = runner.report(args.inp, args.out)
    print(f"{len(summary)} condition summaries -> {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="handover", description="Simulate and analyse robot-to-human handover experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a batch of trials")
    r.add_argument("--config", required=True, help="preset name (exp1.cfg .. exp4.cfg) or config file")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    r.add_argument("--participants", type=int, default=None, help="number of simulated participants")
    r.add_argument("--parallel", type=int, default=1, help="worker processes")
    r.set_defaults(func=_run)

    a = sub.add_parser("analyze", help="metrics for every trial of a batch")
    a.add_argument("--in", dest="inp", required=True, help="batch directory")
    a.add_argument("--out", required=True, help="metrics CSV")
    a.set_defaults(func=_analyze)

    s = sub.add_parser("stats", help="statistics report from a metrics CSV")
    s.add_argument("--in", dest="inp", required=True, help="metrics CSV")
    s.add_argument("--experiment", type=int, required=True, choices=(1, 2, 3, 4))
    s.add_argument("--out", required=True, help="report text file")
    s.set_defaults(func=_stats)

    t = sub.add_parser("report", help="condition summaries and boxplot data")
    t.add_argument("--in", dest="inp", required=True, help="metrics CSV")
    t.add_argument("--out", required=True, help="output directory")
    t.set_defaults(func=_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "parallel", 1) < 1:
        print("error: --parallel must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except runner.RunnerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
