"""Command line entry point: ``ses <subcommand> --config <path> [--seed N] [--set key=value ...]``.

Exit codes: 0 success, 2 configuration error, 3 missing upstream artifact,
4 data error.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .pipeline import (
    STAGES,
    ConfigError,
    DataError,
    DependencyError,
    apply_overrides,
    load_config,
    run_stage,
)

EXIT_OK, EXIT_CONFIG, EXIT_DEPENDENCY, EXIT_DATA = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ses", description="Socioeconomic status inference pipeline.")
    p.add_argument("subcommand", choices=list(STAGES))
    p.add_argument("--config", required=True, help="JSON configuration file")
    p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key, dotted path, JSON value")
    p.add_argument("-q", "--quiet", action="store_true")
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args.config)
        cfg = apply_overrides(cfg, args.overrides)
        if args.seed is not None:
            cfg["seed"] = args.seed
        log = (lambda msg: None) if args.quiet else (lambda msg: print(msg, flush=True))
        run_stage(args.subcommand, cfg, log)
    except ConfigError as exc:
        print(f"ses: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DependencyError as exc:
        print(f"ses: dependency error: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except (DataError, ValueError) as exc:
        print(f"ses: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
