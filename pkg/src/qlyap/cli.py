"""Command-line front end for the benchmark experiments.

Commands are deterministic given (--config file, --seed); each prints the
resolved config checksum first.  Exit codes: 0 success, 2 configuration or
input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys

from . import experiments as ex
from .dataset import SampleFileError
from .optim import OptimizationError
from .quantum import NumericError, ValidationError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--seed", type=int, help="master seed override")
    parser.add_argument("--out", help="output directory override")
    parser.add_argument("--threads", type=int, help="worker threads for batched runs")
    parser.add_argument("--paper-scale", action="store_true",
                        help="full published dataset sizes (hours of compute)")


def _config(args) -> ex.ExperimentConfig:
    overrides = {"seed": args.seed, "outdir": args.out, "threads": args.threads}
    cfg = ex.load_config(args.config, overrides)
    if args.paper_scale:
        cfg = cfg.paper_scale()
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qlyap",
        description="Initial-state-adaptive quantum Lyapunov control experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-samples", help="generate and label a sample set")
    p.add_argument("--kind", choices=["classification", "regression"], required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--name", help="output file name (defaults to a derived name)")
    _add_common(p)

    p = sub.add_parser("train-mlp", help="train the control-scheme classifier")
    p.add_argument("--train", required=True, help="training sample file")
    p.add_argument("--test", required=True, help="testing sample file")
    _add_common(p)

    p = sub.add_parser("table1", help="classifier performance vs training-set size")
    _add_common(p)

    p = sub.add_parser("region-map", help="choice map over theta1 x theta2 at phi=0")
    p.add_argument("--model", required=True, help="trained classifier JSON")
    _add_common(p)

    p = sub.add_parser("tune-grnn", help="build the coefficient regressor and tune sigma")
    p.add_argument("--train", required=True, help="regression sample file")
    _add_common(p)

    p = sub.add_parser("table2", help="regressor performance vs training-set size")
    p.add_argument("--train", required=True, help="regression sample file")
    _add_common(p)

    p = sub.add_parser("infidelity-dist", help="infidelity histograms for all schemes")
    p.add_argument("--model", required=True, help="tuned regressor JSON")
    p.add_argument("--train", required=True, help="regression sample file")
    p.add_argument("--pind", help="reuse optimized baseline 'p1,p2' instead of refitting")
    _add_common(p)

    p = sub.add_parser("baseline-pind", help="state-independent optimized baseline")
    _add_common(p)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        if args.command == "gen-samples":
            ex.cmd_gen_samples(cfg, args.kind, args.count, filename=args.name)
        elif args.command == "train-mlp":
            ex.cmd_train_mlp(cfg, args.train, args.test)
        elif args.command == "table1":
            ex.cmd_table1(cfg)
        elif args.command == "region-map":
            ex.cmd_region_map(cfg, args.model)
        elif args.command == "tune-grnn":
            ex.cmd_tune_grnn(cfg, args.train)
        elif args.command == "table2":
            ex.cmd_table2(cfg, args.train)
        elif args.command == "infidelity-dist":
            pind = None
            if args.pind:
                parts = args.pind.split(",")
                if len(parts) != 2:
                    raise ex.ConfigError("--pind expects 'p1,p2'")
                pind = (float(parts[0]), float(parts[1]))
            ex.cmd_infidelity_dist(cfg, args.model, args.train, pind=pind)
        elif args.command == "baseline-pind":
            ex.cmd_baseline_pind(cfg)
    except (ex.ConfigError, ValidationError, SampleFileError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, OptimizationError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
