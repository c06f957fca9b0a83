"""Command-line entry point: ``tofhair <command> [--config F] [--seed N] [--jobs N] [--out DIR]``."""

from __future__ import annotations

import argparse
import logging
import sys

from tofhair.config import load_config
from tofhair.errors import ConfigError, DataError, InvalidArgumentError, SizeCapError
from tofhair.pipeline import COMMANDS

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_SIZE_CAP = 4

log = logging.getLogger("tofhair")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tofhair", description="ToF-noise-aware hair segmentation pipeline")
    parser.add_argument("command", choices=list(COMMANDS))
    parser.add_argument("--config", help="pipeline JSON (default: the shipped synthetic config)")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--jobs", type=int, default=1, help="subjects processed concurrently")
    parser.add_argument("--out", default="tofhair-out", help="dataset directory")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg = load_config(args.config, seed=args.seed)
        COMMANDS[args.command](cfg, args.out, jobs=args.jobs)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except SizeCapError as exc:
        log.error("size cap: %s", exc)
        return EXIT_SIZE_CAP
    except (DataError, InvalidArgumentError, OSError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    log.info("%s done", args.command)
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
