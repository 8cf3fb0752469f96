"""Command line interface.

Subcommands ``simulate``, ``fit``, ``eval`` and ``bench``. Exit codes: 0 on
success, 2 for configuration errors, 3 when a fit aborts numerically. Set
``TGCCA_LOG`` to ``error``, ``warn``, ``info`` or ``debug`` for logging on
stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .io import TensorFormatError
from .model import ConfigError
from .pipeline import load_json, run_bench, run_eval, run_fit, run_simulate
from .solver import NumericalAbort

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging() -> None:
    name = os.environ.get("TGCCA_LOG", "warn").lower()
    logging.basicConfig(level=LOG_LEVELS.get(name, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tgcca", description="Tensor generalized canonical correlation analysis.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override the seed in the config")

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("fit", help="fit models on every fold of a dataset")
    common(p)
    p.add_argument("--data", default=None, help="dataset directory (defaults to the config's 'data')")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="folds fitted concurrently")

    p = sub.add_parser("eval", help="recompute alignment tables from a fit directory")
    p.add_argument("--run", required=True, help="fit output directory")
    p.add_argument("--data", default=None, help="dataset directory (defaults to the one recorded by the fit)")
    p.add_argument("--out", default=None, help="write alignment.csv and summary.csv here")

    p = sub.add_parser("bench", help="time mode-product against explicit Kronecker whitening")
    common(p, config_required=False)
    p.add_argument("--out", default=None, help="write the JSON report here instead of stdout")
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            run_simulate(load_json(args.config), args.out, args.seed)
        elif args.command == "fit":
            cfg = load_json(args.config)
            data = args.data or cfg.get("data")
            if data is None:
                raise ConfigError("no dataset given: pass --data or set 'data' in the config")
            run_fit(cfg, data, args.out, max(1, args.threads), args.seed)
        elif args.command == "eval":
            _, summary = run_eval(args.run, args.data, args.out)
            if args.out is None:
                sys.stdout.write(summary)
        elif args.command == "bench":
            cfg = load_json(args.config) if args.config else {}
            text = json.dumps(run_bench(cfg, args.seed), indent=2) + "\n"
            if args.out:
                with open(args.out, "w") as fh:
                    fh.write(text)
            else:
                sys.stdout.write(text)
    except (ConfigError, TensorFormatError, FileNotFoundError, NotADirectoryError) as exc:
        print(f"tgcca: configuration error: {exc}", file=sys.stderr)
        return 2
    except (NumericalAbort, ArithmeticError) as exc:
        print(f"tgcca: numerical abort: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
