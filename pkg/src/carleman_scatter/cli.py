"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .pipeline import ConfigError, StageError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _u64(text: str) -> int:
    try:
        val = int(text, 10)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= val < 2**64:
        raise argparse.ArgumentTypeError(f"seed out of the unsigned 64-bit range: {text}")
    return val


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="carleman-scatter",
                                     description="Dielectric constant reconstruction from multi-angle boundary data.")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat JSON file with run configuration fields")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--profile", choices=sorted(pipeline.PROFILES), default="desk")
    common.add_argument("--seed", type=_u64, help="noise seed (overrides the config)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub.add_parser("gen-data", parents=[common], help="simulate boundary data")
    for name, text in (("choose-n", "compute e(N) and the critical cutoff"),
                       ("reconstruct", "reconstruct from an existing data set")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--data", help="dataset directory (default <out>/data)")
    sub.add_parser("full", parents=[common], help="gen-data followed by reconstruct")
    p = sub.add_parser("metrics", parents=[common], help="score a stored reconstruction")
    p.add_argument("--c", dest="c_path", help="c_comp.csv to score (default <out>/c_comp.csv)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = pipeline.load_config(args.config, args.profile, {"out": args.out, "seed": args.seed})
        if args.command == "gen-data":
            result = pipeline.cmd_gen_data(cfg)
        elif args.command == "choose-n":
            result = pipeline.cmd_choose_n(cfg, args.data)
            print(f"selected N = {result.summary['selected_N']}")
        elif args.command == "reconstruct":
            result = pipeline.cmd_reconstruct(cfg, args.data)
        elif args.command == "full":
            result = pipeline.cmd_full(cfg)
        else:
            result = pipeline.cmd_metrics(cfg, args.c_path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"numerical failure in stage {exc.stage}: {exc.cause}", file=sys.stderr)
        return EXIT_NUMERICAL
    if "metrics" in result.summary:
        print(json.dumps(pipeline._clean(result.summary["metrics"]), indent=2, sort_keys=True))
    for path in result.files:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
