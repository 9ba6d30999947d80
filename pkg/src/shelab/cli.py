"""Command-line entry point.

Usage::

    shelab {constants,simulate,oracle,verify,convergence} --config FILE [--out DIR] [--threads N]

Exit codes: 0 success, 1 a verification test failed, 2 an input failed
validation, 3 the configuration is malformed or cannot be executed.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import parallel
from .errors import ConfigurationError, ValidationError
from .experiments import RUNNERS, ExperimentConfig, run_verify
from .records import append_records

log = logging.getLogger("shelab")

EXIT_OK, EXIT_TEST_FAILURE, EXIT_VALIDATION, EXIT_CONFIGURATION = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shelab", description="Lattice SPDE simulations and particle oracles.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in [
        ("constants", "mollifier constants"),
        ("simulate", "lattice moments and field snapshots"),
        ("oracle", "particle-system and closed-form moments"),
        ("verify", "run a verification suite"),
        ("convergence", "moment gaps along an eps ladder"),
    ]:
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="JSON experiment configuration")
        p.add_argument("--out", default="shelab-out", help="output directory (default: shelab-out)")
        p.add_argument("--threads", type=int, default=1, help="worker threads, 0 for all cores")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        parallel.set_threads(args.threads)
        cfg = ExperimentConfig.load(args.config, args.out)
        if cfg.kind != args.command:
            raise ConfigurationError(f"configuration kind {cfg.kind!r} does not match command {args.command!r}")
        cfg.out.mkdir(parents=True, exist_ok=True)
        if args.command == "verify":
            records, ok = run_verify(cfg)
        else:
            records, ok = RUNNERS[args.command](cfg), True
        append_records(cfg.out / "results.jsonl", records)
    except ValidationError as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ConfigurationError, ValueError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIGURATION
    for rec in records:
        print(f"{rec.operation:28s} {rec.payload}")
    return EXIT_OK if ok else EXIT_TEST_FAILURE


if __name__ == "__main__":
    sys.exit(main())
