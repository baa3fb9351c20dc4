#!/usr/bin/env python3
"""Launch script for the mchmm command line."""

import logging
import sys

from pydantic import ValidationError

from mchmm.config import LOG_LEVEL
from mchmm.cli.commands import build_parser, check_args
from mchmm.core.errors import ConfigError, NumericError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def main(argv=None) -> int:
    """Run one subcommand and return its exit code."""
    logging.basicConfig(level=LOG_LEVEL, format="[%(levelname)s] %(message)s")
    args = build_parser().parse_args(argv)
    try:
        check_args(args)
        for line in args.handler(args):
            print(line, flush=True)
    except (ConfigError, ValidationError) as exc:
        print(f"[ERROR] {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"[ERROR] {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
