"""Command line entry point: ``kprotect <subcommand>``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import harness
from .audit import breach_probability
from .errors import KProtectError
from .plan import CompositionPlan


def _sizes(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kprotect", description="k-protected federated query engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write synthetic DS1/DS2/DS3 event logs")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--sizes", type=_sizes, default=[5000])
    p.add_argument("--cities", type=int, default=10)
    p.add_argument("--out", required=True)

    p = sub.add_parser("run", help="execute one plan")
    p.add_argument("--config", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--mode", choices=("protected", "unprotected"), default="protected")
    p.add_argument("--out", required=True)

    p = sub.add_parser("bench", help="sweep sizes, modes and optimizations")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--plan", default=None)

    p = sub.add_parser("audit", help="check a transcript for k-Protection violations")
    p.add_argument("--transcript", required=True)
    p.add_argument("--stores", required=True)
    p.add_argument("--plan", default=None)

    p = sub.add_parser("breach-prob", help="replay-breach probability 1/(alpha*k)^2")
    p.add_argument("--alpha", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except (KProtectError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "gen-data":
        for root in harness.gen_data(args.seed, args.sizes, args.cities, args.out):
            print(root)
        return 0
    if args.command == "run":
        config = harness.ExperimentConfig.load(args.config)
        plan = CompositionPlan.load(args.plan)
        outcome = harness.run(config, plan, args.mode, args.out)
        print(",".join(str(outcome.metrics[h]) for h in harness.METRICS_HEADER))
        return 0
    if args.command == "bench":
        config = harness.ExperimentConfig.load(args.config)
        plan = CompositionPlan.load(args.plan) if args.plan else None
        rows = harness.bench(config, args.out, plan)
        print(f"wrote {len(rows)} rows to {args.out}")
        return 0
    if args.command == "audit":
        report = harness.audit_run(args.transcript, args.stores, args.plan)
        sys.stdout.write(report.to_text())
        return 0 if report.passed else 1
    if args.command == "breach-prob":
        print(f"{breach_probability(args.alpha, args.k):.12g}")
        return 0
    raise AssertionError(args.command)


if __name__ == "__main__":
    raise SystemExit(main())
