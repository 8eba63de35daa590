"""Command-line entry point: ``bbmctl run`` and ``bbmctl validate``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_ACCEPTANCE = 0, 1, 2, 3

log = logging.getLogger("bbmctl")


def _numerical_errors() -> tuple:
    from .dynamics import BlowUpError
    from .feedback import DegenerateFit, LedgerError
    from .moment import ConditioningError, DegenerateDamping, NoContraction, SingularCluster

    return (BlowUpError, DegenerateFit, LedgerError, ConditioningError, DegenerateDamping,
            NoContraction, SingularCluster, FloatingPointError, ArithmeticError, RuntimeError,
            ValueError)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bbmctl", description="BBM / KdV-BBM simulation and control experiments")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario")
    r.add_argument("config", type=Path)
    r.add_argument("--strict", action="store_true", help="exit 3 if any acceptance check fails")
    r.add_argument("--output-dir", type=Path)
    r.add_argument("--seed", type=int)
    v = sub.add_parser("validate", help="check a configuration file")
    v.add_argument("config", type=Path)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    if args.command == "validate":
        print(f"{args.config}: ok ({cfg.scenario})")
        return EXIT_OK

    from .runner import run

    if args.seed is not None:
        cfg = dataclasses.replace(cfg, io=dataclasses.replace(cfg.io, seed=args.seed))
    out = args.output_dir or Path(cfg.io.output_dir)
    try:
        doc = run(cfg, out, base=args.config.parent)
    except _numerical_errors() as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for name, c in doc["checks"].items():
        print(f"{'PASS' if c['passed'] else 'FAIL'} {name}: {c['value']:.3e} {c['op']} {c['threshold']:g}")
    print(f"summary: {out / 'summary.json'}")
    if args.strict and not doc["all_passed"]:
        return EXIT_ACCEPTANCE
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
