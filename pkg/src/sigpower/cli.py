"""Command-line entry point: run a seeded experiment and write its CSV.

Exit status is 0 on success, 1 for configuration errors and 2 when the run
itself fails.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from .bench import SCHEMES, ConfigError, ExperimentConfig, emit_csv, format_csv, load_config, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _csv(kind):
    def parse(text):
        try:
            return tuple(kind(t.strip()) for t in text.split(",") if t.strip())
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None
    return parse


def _u64(text):
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sigpower", description="MSE versus number of signature rows for all restoration schemes.")
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--out", help="CSV output path (default: stdout)")
    p.add_argument("--seed", type=_u64)
    p.add_argument("--frames", type=int, help="frames per M")
    p.add_argument("--m-values", type=_csv(int), help="comma separated, e.g. 5,10,15")
    p.add_argument("--sigma2", type=float, help="graph kernel width")
    p.add_argument("--schemes", type=_csv(str), help=f"subset of {','.join(SCHEMES)}")
    p.add_argument("--fading", choices=("real", "complex"))
    p.add_argument("--verbose", action="store_true", help="progress and per-cell statistics on stderr")
    return p


def config_from_args(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {
        "seed": args.seed,
        "n_frames": args.frames,
        "m_values": args.m_values,
        "sigma2": args.sigma2,
        "schemes": args.schemes,
        "fading_mode": args.fading,
    }
    return dataclasses.replace(config, **{k: v for k, v in overrides.items() if v is not None})


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        config = config_from_args(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_CONFIG

    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        table = run_experiment(config)
        if args.out:
            emit_csv(table, args.out)
        else:
            sys.stdout.write(format_csv(table))
    except Exception as exc:  # anything past config validation is a run failure
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
