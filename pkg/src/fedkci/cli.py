"""Command line: ``fedkci run|summarize|gradcheck``.

Exit codes: 0 success, 1 configuration error, 2 data/I-O error,
3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from . import gradcheck
from .errors import FedKCIError
from .experiment import format_summary, parse_config, run_experiment, summarize


def _run(args) -> int:
    cfg = parse_config(args.config)
    if args.workers:
        cfg = replace(cfg, workers=args.workers)
    run_experiment(cfg, output=args.output)
    return 0


def _summarize(args) -> int:
    print(format_summary(summarize(args.results, threshold=args.threshold)))
    return 0


def _gradcheck(args) -> int:
    reports = gradcheck.run_suite(args.seeds)
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.kind:<20} seeds={r.seeds:<3} max_rel_err={r.max_error:.3e}  {status}")
    return 0 if all(r.passed for r in reports) else 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedkci", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute an experiment config")
    run.add_argument("config")
    run.add_argument("--output", help="override [experiment] output")
    run.add_argument("--workers", type=int, help="threads for concurrent client training")
    run.set_defaults(func=_run)

    summ = sub.add_parser("summarize", help="final/best accuracy per run from a results CSV")
    summ.add_argument("results")
    summ.add_argument("--threshold", type=float, default=0.5)
    summ.set_defaults(func=_summarize)

    grad = sub.add_parser("gradcheck", help="finite-difference check of every layer type")
    grad.add_argument("--seeds", type=int, default=20)
    grad.set_defaults(func=_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FedKCIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
