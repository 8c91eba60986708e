"""Command-line entry point: ``sessprop <command> --config run.yaml``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from typing import Sequence

from .config import ConfigError, RunConfig, load_config
from .core import SessPropError
from .ingest import ConfigurationError
from .pipeline import (
    RunOptions,
    run_all,
    run_ensemble,
    run_evaluate,
    run_preprocess,
    run_propensity,
    run_report,
    run_train,
)
from .propensity import FitError
from .recommenders.gru4rec import NumericError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, ConfigurationError)):
        return EXIT_USAGE
    if isinstance(exc, (NumericError, FitError)):
        return EXIT_NUMERIC
    return EXIT_DATA


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sessprop", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker threads for scoring (default: available CPUs)")
    parser.add_argument("--deterministic", action="store_true",
                        help="force single-threaded scoring and reduction order")
    parser.add_argument("-v", "--verbose", action="count", default=0)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", required=True, help="run config (YAML)")
    common.add_argument("--output-dir", help="override output_dir (also settable via SESSPROP_OUTPUT_DIR)")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("preprocess", parents=[common], help="parse raw logs, filter, split, write the dataset snapshot")
    sub.add_parser("propensity", parents=[common], help="fit gamma, write item propensity table and histogram")
    train = sub.add_parser("train", parents=[common], help="train and persist a model")
    train.add_argument("--model", "-m", action="append", required=True,
                       help="sknn, gru4rec or popularity (repeatable)")
    evaluate = sub.add_parser("evaluate", parents=[common], help="evaluate models overall and on strata")
    evaluate.add_argument("--model", "-m", action="append",
                          help="model name or module:factory plugin (default: evaluation.models)")
    sub.add_parser("ensemble", parents=[common], help="fixed and dynamic propensity-weighted ensembles")
    sub.add_parser("report", parents=[common], help="render plot-ready aggregates and a summary")
    sub.add_parser("run", parents=[common], help="all stages in order")
    sub.add_parser("show-config", parents=[common], help="print the resolved config")
    return parser


def _load(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.output_dir:
        cfg = dataclasses.replace(cfg, output_dir=args.output_dir)
    return cfg


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    options = RunOptions(threads=args.threads, deterministic=args.deterministic)
    try:
        cfg = _load(args)
        if args.command == "preprocess":
            summary = run_preprocess(cfg)
            print(json.dumps(summary["stats"], indent=2))
        elif args.command == "propensity":
            doc = run_propensity(cfg)
            print(f"gamma={doc['gamma']!r} source={doc['fit']['source']}")
        elif args.command == "train":
            for name in args.model:
                info = run_train(cfg, name)
                print(f"trained {name}" + (" (untrained: epochs=0)" if info.get("untrained") else ""))
        elif args.command == "evaluate":
            report = run_evaluate(cfg, args.model, options)
            for model, m in report["overall"].items():
                print(f"{model}: HR@{report['n']}={m['hit_rate']:.4f} MRR@{report['n']}={m['mrr']:.4f}")
        elif args.command == "ensemble":
            report = run_ensemble(cfg)
            for name, col in report["columns"].items():
                print(f"{name}: HR@{report['n']}={col['overall']['hit_rate']:.4f} MRR@{report['n']}={col['overall']['mrr']:.4f}")
        elif args.command == "report":
            run_report(cfg)
            print(f"wrote {cfg.output_path / 'report'}")
        elif args.command == "run":
            run_all(cfg, options)
            print(f"wrote {cfg.output_path}")
        elif args.command == "show-config":
            print(json.dumps(cfg.resolved(), indent=2, sort_keys=True))
    except (SessPropError, OSError) as exc:
        print(f"sessprop {args.command}: error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
