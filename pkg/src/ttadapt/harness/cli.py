"""Command-line interface.

Subcommands: run, compare, sweep-views, dump-embeddings, gen-synth.
Exit codes: 0 success, 2 configuration error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ..errors import ConfigError, NumericalError, TtadaptError
from .config import ExperimentConfig
from .run import (
    build_experiment,
    compare,
    dump_embeddings,
    export_synthetic,
    run_experiment,
    sweep_views,
    write_sweep,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="TOML config file merged over the built-in defaults")
    parser.add_argument("--seed", type=int, help="run seed (overrides config)")
    parser.add_argument("--out", help="output directory (overrides config)")
    parser.add_argument(
        "--override", action="append", default=[], metavar="KEY=VALUE",
        help="dotted config override, repeatable (e.g. adapter.lr=0.01)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ttadapt",
        description="Online test-time adaptation engine for prototype-based classifiers",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one online adaptation experiment")
    _common_flags(p_run)

    p_cmp = sub.add_parser("compare", help="tabulate finished runs side by side")
    p_cmp.add_argument("run_dirs", nargs="+", help="run output directories")
    p_cmp.add_argument("--out", help="write comparison.csv/.txt here")

    p_sweep = sub.add_parser("sweep-views", help="error rate versus augmentation view count")
    _common_flags(p_sweep)
    p_sweep.add_argument(
        "--views", default="1,8,16,32,64",
        help="comma-separated view counts (default 1,8,16,32,64)",
    )

    p_dump = sub.add_parser("dump-embeddings", help="run, then export post-adaptation embeddings")
    _common_flags(p_dump)
    p_dump.add_argument("--dump-path", required=True, help="output TTAE file")

    p_gen = sub.add_parser("gen-synth", help="export the synthetic benchmark as TTAE + TTAP")
    _common_flags(p_gen)
    p_gen.add_argument("--views", type=int, default=1, help="views per sample to embed")
    return parser


def _load_config(args) -> ExperimentConfig:
    return ExperimentConfig.load(
        config_path=args.config, overrides=args.override, seed=args.seed, out=args.out
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = _load_config(args)
            record, _ = run_experiment(cfg)
            print(f"[{record.label}] overall error {record.overall_error():.2f}% "
                  f"({record.total_errors}/{record.total_samples}) "
                  f"in {record.wall_clock:.1f}s seed={record.seed}")
            for name, err in record.per_domain_error().items():
                print(f"  {name:20s} {err:6.2f}%")
            if cfg.run["out"]:
                print(f"outputs -> {cfg.run['out']}")
        elif args.command == "compare":
            table = compare([Path(p) for p in args.run_dirs])
            print(table.to_text(), end="")
            if args.out:
                out = Path(args.out)
                out.mkdir(parents=True, exist_ok=True)
                (out / "comparison.csv").write_text(table.to_csv_text(), encoding="utf-8")
                (out / "comparison.txt").write_text(table.to_text(), encoding="utf-8")
                print(f"outputs -> {out}")
        elif args.command == "sweep-views":
            cfg = _load_config(args)
            counts = [int(v) for v in str(args.views).split(",") if v]
            sweep = sweep_views(cfg, counts)
            print(f"source baseline {sweep['source_baseline_percent']:.2f}%")
            for n, e in zip(sweep["view_counts"], sweep["errors_percent"]):
                print(f"  views={n:<4d} error {e:6.2f}%")
            if cfg.run["out"]:
                write_sweep(sweep, Path(cfg.run["out"]))
                print(f"outputs -> {cfg.run['out']}")
        elif args.command == "dump-embeddings":
            cfg = _load_config(args)
            exp = build_experiment(cfg)
            record, exp = run_experiment(cfg, exp)
            dump_embeddings(exp, args.dump_path)
            print(f"[{record.label}] overall error {record.overall_error():.2f}%; "
                  f"embeddings -> {args.dump_path}")
        elif args.command == "gen-synth":
            cfg = _load_config(args)
            if not cfg.run["out"]:
                raise ConfigError("gen-synth requires --out")
            info = export_synthetic(cfg, Path(cfg.run["out"]), n_views=args.views)
            print(f"exported {info['samples']} samples x {info['views']} views")
            print(f"  ttae -> {info['ttae']}")
            print(f"  ttap -> {info['ttap']}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except TtadaptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
