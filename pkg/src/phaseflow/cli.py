"""Command-line entry point.

    phaseflow slaving     --config slaving.yaml --seed 0 --out results/slaving
    phaseflow lift-test   --out results/lift
    phaseflow cpi         --config cpi.yaml
    phaseflow direct      --seed 3
    phaseflow pde-compare --out results/pde

Exit status is 0 when the experiment's built-in criterion passes, 1 when it
fails and 2 for configuration errors.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigError
from .experiments import run_experiment
from .io import load_config

COMMANDS = {
    "slaving": ("slaving-study", "conditional-density slaving study over the reference cases"),
    "lift-test": ("lift-test", "interrupt a direct run, lift the restricted density and continue"),
    "cpi": ("cpi-run", "coarse projective integration against a direct ensemble"),
    "direct": ("direct-run", "plain ensemble simulation with a stationary Little's-law check"),
    "pde-compare": ("pde-compare", "closed density equation against Monte Carlo densities"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phaseflow", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="YAML file with flat experiment keys (defaults if omitted)")
        p.add_argument("--seed", type=int, default=None, help="base seed (overrides the config)")
        p.add_argument("--out", default=None, help="output directory (overrides the config)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s: %(message)s")
    experiment = COMMANDS[args.command][0]
    try:
        cfg = load_config(args.config, experiment=experiment, seed=args.seed, out=args.out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    report = run_experiment(cfg, cfg.out)
    print(report.text())
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
