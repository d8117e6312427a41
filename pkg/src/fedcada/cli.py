"""Command line interface.

Subcommands:

    run        --config PATH [--seed N] [--out DIR] [--workers N]
    partition  --config PATH --out DIR
    curves     --beta F --rounds N --out DIR

Progress goes to stderr, data to files in the output directory. Exit
codes: 0 success, 2 configuration error, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import experiment
from .config import parse_config, resolve_out_dir, with_overrides
from .errors import ConfigError, DivergenceError


def _progress(log, _state) -> None:
    print(
        f"[round {log.round}] train_loss={log.mean_client_train_loss:.6f}"
        f" test_loss={log.global_test_loss:.6f} test_acc={log.global_test_acc:.4f}",
        file=sys.stderr,
    )


def cmd_run(args) -> int:
    cfg = with_overrides(parse_config(args.config), seed=args.seed)
    out = Path(resolve_out_dir(args.out, cfg))
    out.mkdir(parents=True, exist_ok=True)
    try:
        result, wall_ms = experiment.timed(
            lambda: experiment.run_experiment(cfg, workers=args.workers, on_round=_progress)
        )
    except DivergenceError as exc:
        experiment.write_rounds_csv(out / "rounds.csv", exc.round_logs)
        print(f"diverged: {exc}", file=sys.stderr)
        return 3
    experiment.write_rounds_csv(out / "rounds.csv", result.round_logs)
    experiment.write_summary_json(out / "summary.json", cfg, result.round_logs, wall_ms)
    if result.cka_m is not None:
        experiment.write_cka_csv(out / "cka_m.csv", result.cka_m)
        experiment.write_cka_csv(out / "cka_v.csv", result.cka_v)
    return 0


def cmd_partition(args) -> int:
    cfg = parse_config(args.config)
    out = Path(resolve_out_dir(args.out, cfg))
    out.mkdir(parents=True, exist_ok=True)
    dataset = experiment.build_dataset(cfg)
    shards = experiment.build_raw_shards(cfg, dataset)
    experiment.write_partition_csv(out / "partition.csv", dataset, shards)
    return 0


def cmd_curves(args) -> int:
    if not 0.0 < args.beta < 1.0:
        raise ConfigError(f"--beta must lie in (0, 1), got {args.beta}")
    if args.rounds < 1:
        raise ConfigError(f"--rounds must be >= 1, got {args.rounds}")
    out = Path(args.out or os.environ.get("FEDCADA_OUT") or "out")
    out.mkdir(parents=True, exist_ok=True)
    experiment.write_curves_csv(out / "curves.csv", args.beta, args.rounds)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedcada", description="Deterministic federated learning simulator."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment from a config file")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--out", default=None, help="output directory")
    run.add_argument("--workers", type=int, default=1, help="parallel client workers")
    run.set_defaults(func=cmd_run)

    part = sub.add_parser("partition", help="write shard class histograms, no training")
    part.add_argument("--config", required=True)
    part.add_argument("--out", default=None)
    part.set_defaults(func=cmd_partition)

    curves = sub.add_parser("curves", help="export the correction denominator curves")
    curves.add_argument("--beta", type=float, required=True)
    curves.add_argument("--rounds", type=int, required=True)
    curves.add_argument("--out", default=None)
    curves.set_defaults(func=cmd_curves)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
