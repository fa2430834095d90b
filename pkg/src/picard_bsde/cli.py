"""``picard-bsde`` command line: one subcommand per experiment.

Exit status is 0 on success, 1 on a validation error and 2 when the
estimated Monte-Carlo cost exceeds the configured ceiling.
"""
from __future__ import annotations

import argparse
import sys

from .engine import BudgetExceeded
from .experiments import COMMANDS, ConfigError, ExperimentConfig, run

# flag -> config key
_FLAGS = {
    "out": "out",
    "seed": "seed",
    "paths": "paths",
    "steps": "steps",
    "k_min": "k_min",
    "k_max": "k_max",
    "b_norm_sq": "b_norm_sq",
    "eps": "eps",
    "threads": "threads",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", help="master seed (u64)")
    common.add_argument("--paths", help="Monte-Carlo paths")
    common.add_argument("--steps", help="time steps on [0, 1]")
    common.add_argument("--k-min", dest="k_min", help="first k of the range")
    common.add_argument("--k-max", dest="k_max", help="last k of the range")
    common.add_argument("--b-norm-sq", dest="b_norm_sq", help="|b|^2 of the linear example")
    common.add_argument("--eps", help="sandwich slack in (0, 1)")
    common.add_argument("--threads", help="worker threads")
    common.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE", help="override any other config key"
    )
    parser = argparse.ArgumentParser(prog="picard-bsde", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def config_from_args(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    raw = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        raw[key.strip()] = value
    for attr, key in _FLAGS.items():
        value = getattr(args, attr)
        if value is not None:
            raw[key] = value
    return cfg.updated(raw)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        result = run(args.command, cfg)
    except BudgetExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for key in ("csv", "json"):
        if key in result:
            print(result[key])
    return 0


if __name__ == "__main__":
    sys.exit(main())
