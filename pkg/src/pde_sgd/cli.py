"""Command line entry point: ``pde-sgd <subcommand> --config FILE [--seed S] [--out DIR]``."""
from __future__ import annotations

import argparse
import logging
import sys

from . import experiments as ex
from .config import ConfigError, ExperimentConfig, load_config

SUBCOMMANDS = {
    "fem-convergence": (ex.fem_convergence, "manufactured-solution convergence study"),
    "sc-run": (ex.sc_run, "one strongly convex PSG run with objective trace"),
    "sc-ensemble": (ex.sc_ensemble, "multi-seed strongly convex run, error slopes against the reference"),
    "avg-sweep": (ex.avg_sweep, "averaged runs over the N sweep for the constant and variable rules"),
    "ref-solution": (ex.ref_solution, "long run producing the stored reference control"),
    "compare": (ex.compare, "errors of the sc-run iterate against the stored reference"),
    "theory": (ex.theory, "step sizes, mesh bounds and the recursion certificate"),
    "fields": (ex.fields_report, "random-field eigenvalues and coefficient bounds"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pde-sgd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="INI config file (defaults apply when omitted)")
        p.add_argument("--seed", type=int, help="master seed, overrides [run] seed")
        p.add_argument("--out", help="output directory, overrides [output] dir")
        p.add_argument("-v", "--verbose", action="store_true", help="progress messages on stderr")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.out is not None:
            cfg = cfg.with_output(args.out)
        func = SUBCOMMANDS[args.command][0]
        func(cfg)
    except (ConfigError, ex.ExperimentError, OSError, ValueError, RuntimeError) as exc:
        print(f"pde-sgd {args.command}: error: {exc}", file=sys.stderr)
        return 1
    print(f"pde-sgd {args.command}: wrote results to {cfg.output.dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
