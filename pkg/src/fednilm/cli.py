"""Command-line entry point: ``fednilm run|sweep|validate <config>``."""
from __future__ import annotations

import argparse
import logging
import sys

from . import experiment
from .errors import ConfigError, DataError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


def _common(p):
    p.add_argument("config", help="experiment config (YAML)")
    p.add_argument("--seed", type=int, help="override master_seed")
    p.add_argument("--output-dir", help=f"override output_dir (env: {experiment.OUTPUT_DIR_ENV})")
    p.add_argument("--sequential", action="store_true", help="train clients on a single worker")
    p.add_argument("--workers", type=int, help="client worker threads")
    p.add_argument("--format", choices=("csv", "json"), default="csv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fednilm", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("run", help="run one scenario"))
    sw = sub.add_parser("sweep", help="run a scenario over a parameter axis")
    _common(sw)
    sw.add_argument("--axis", required=True, help="e.g. epsilon=4,8,12")
    sw.add_argument("--scenarios", help="comma-separated scenarios (default: the config's)")
    v = sub.add_parser("validate", help="parse and validate a config, print it with defaults")
    v.add_argument("config")
    return parser


def _load(args):
    cfg = experiment.parse_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.master_seed = args.seed
    return cfg


def _workers(args, cfg):
    if args.sequential:
        return 1
    return args.workers or cfg.workers


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate":
            cfg = _load(args)
            sys.stdout.write(experiment.dump_config(cfg))
            return EXIT_OK
        cfg = _load(args)
        out_dir = experiment.resolve_output_dir(cfg, args.output_dir)
        workers = _workers(args, cfg)
        if args.command == "run":
            report = experiment.run_scenario(cfg, workers=workers)
            experiment.write_report(report, out_dir, args.format)
            print(f"{cfg.scenario}: hash {report.content_hash} -> {out_dir}")
            for app, s in report.scores.items():
                print(f"  {app:16s} acc={s['accuracy']:.4f} f1={s['f1']:.4f} "
                      f"prec={s['precision']:.4f} rec={s['recall']:.4f}")
            if report.attack:
                print(f"  attack asr={report.attack['asr']:.4f}")
            return EXIT_OK
        axis, values = experiment.parse_axis(args.axis)
        scenarios = args.scenarios.split(",") if args.scenarios else None
        reports, table = experiment.sweep(cfg, axis, values, scenarios, workers=workers)
        experiment.write_sweep(reports, table, out_dir, axis, args.format)
        for row in table:
            print(f"{row['scenario']:12s} {axis}={row[axis]:g} asr={row['asr']:.4f} hash={row['content_hash'][:12]}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, FloatingPointError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
