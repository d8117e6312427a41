"""Experiment assembly and file output.

Builds dataset, shards, and model from an ExperimentConfig, runs
training, and writes the result files. All files are written to a
temporary name and renamed into place, so a successful run never leaves
a partial file behind. Float cells use repr(), which round-trips
exactly, keeping equal runs byte-identical.
"""

from __future__ import annotations

import csv
import json
import os
import time
from pathlib import Path

import numpy as np

from . import seeding
from .config import ExperimentConfig
from .data import (
    ClientShard,
    Dataset,
    PartitionSpec,
    load_idx,
    make_synthetic_blobs,
    partition,
    split_train_eval,
)
from .federation import TrainingResult, run_training
from .metrics import RoundLog
from .nn import MlpSpec

ROUNDS_HEADER = ["round", "train_loss", "test_loss", "test_acc"]
CURVE_COLUMNS = ["vanilla", "add_geometric", "add_square", "add_sine", "add_sqrt"]


def build_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.data_source == "idx":
        return load_idx(cfg.data_images, cfg.data_labels)
    return make_synthetic_blobs(
        cfg.data_classes,
        cfg.data_dim,
        cfg.data_per_class,
        cfg.data_spread,
        seeding.substream_seed(cfg.seed, "data"),
    )


def build_raw_shards(cfg: ExperimentConfig, dataset: Dataset) -> list[ClientShard]:
    """Partition only, no train/eval split (used by `partition` output)."""
    spec = PartitionSpec(
        mode=cfg.partition_mode,
        num_clients=cfg.num_clients,
        alpha=cfg.alpha,
        min_shard_size=cfg.min_shard_size,
        seed=seeding.substream_seed(cfg.seed, "partition"),
    )
    return partition(dataset, spec)


def build_shards(cfg: ExperimentConfig, dataset: Dataset) -> list[ClientShard]:
    return [
        split_train_eval(
            shard, cfg.train_fraction, seeding.substream_seed(cfg.seed, "split", shard.client_id)
        )
        for shard in build_raw_shards(cfg, dataset)
    ]


def model_spec(cfg: ExperimentConfig, dataset: Dataset) -> MlpSpec:
    return MlpSpec((dataset.dim, cfg.hidden1, cfg.hidden2, dataset.num_classes))


def run_experiment(
    cfg: ExperimentConfig, *, workers: int = 1, on_round=None
) -> TrainingResult:
    dataset = build_dataset(cfg)
    shards = build_shards(cfg, dataset)
    return run_training(
        cfg.to_strategy(),
        cfg.to_fed_config(),
        dataset,
        shards,
        model_spec(cfg, dataset),
        cka_interval=cfg.cka_interval,
        workers=workers,
        on_round=on_round,
    )


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_rounds_csv(path, logs: list[RoundLog]) -> None:
    lines = [",".join(ROUNDS_HEADER)]
    for log in logs:
        lines.append(
            f"{log.round},{log.mean_client_train_loss!r},"
            f"{log.global_test_loss!r},{log.global_test_acc!r}"
        )
    _atomic_write_text(Path(path), "\n".join(lines) + "\n")


def read_rounds_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ROUNDS_HEADER:
            raise ValueError(f"unexpected rounds header: {reader.fieldnames}")
        return [
            {
                "round": int(row["round"]),
                "train_loss": float(row["train_loss"]),
                "test_loss": float(row["test_loss"]),
                "test_acc": float(row["test_acc"]),
            }
            for row in reader
        ]


def write_summary_json(path, cfg: ExperimentConfig, logs: list[RoundLog], wall_ms: int) -> None:
    accs = [log.global_test_acc for log in logs]
    summary = {
        "rounds_completed": len(logs),
        "final_acc": accs[-1] if accs else None,
        "best_acc": max(accs) if accs else None,
        "final_train_loss": logs[-1].mean_client_train_loss if logs else None,
        "seed": cfg.seed,
        "total_wall_ms": wall_ms,
        "config": cfg.to_dict(),
    }
    _atomic_write_text(Path(path), json.dumps(summary, indent=2) + "\n")


def write_cka_csv(path, matrix: np.ndarray) -> None:
    lines = [",".join(repr(float(x)) for x in row) for row in matrix]
    _atomic_write_text(Path(path), "\n".join(lines) + "\n")


def read_cka_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [[float(x) for x in record] for record in csv.reader(fh)]
    return np.array(rows)


def write_partition_csv(path, dataset: Dataset, shards: list[ClientShard]) -> None:
    lines = ["client,class,count"]
    for shard in shards:
        counts = np.bincount(dataset.labels[shard.all_idx], minlength=dataset.num_classes)
        for cls, count in enumerate(counts):
            lines.append(f"{shard.client_id},{cls},{int(count)}")
    _atomic_write_text(Path(path), "\n".join(lines) + "\n")


def read_partition_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["client", "class", "count"]:
            raise ValueError(f"unexpected partition header: {reader.fieldnames}")
        return [
            {"client": int(r["client"]), "class": int(r["class"]), "count": int(r["count"])}
            for r in reader
        ]


def write_curves_csv(path, beta: float, rounds: int) -> None:
    from .optim import CorrectionMode, denominator_curve

    modes = [
        CorrectionMode.VANILLA_SUBTRACT,
        CorrectionMode.ADD_GEOMETRIC,
        CorrectionMode.ADD_SQUARE,
        CorrectionMode.ADD_SINE,
        CorrectionMode.ADD_SQRT,
    ]
    curves = [denominator_curve(mode, beta, rounds) for mode in modes]
    lines = ["t," + ",".join(CURVE_COLUMNS)]
    for t in range(rounds):
        cells = ",".join(repr(float(curve[t])) for curve in curves)
        lines.append(f"{t + 1},{cells}")
    _atomic_write_text(Path(path), "\n".join(lines) + "\n")


def read_curves_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["t"] + CURVE_COLUMNS:
            raise ValueError(f"unexpected curves header: {reader.fieldnames}")
        return [
            {key: (int(row[key]) if key == "t" else float(row[key])) for key in row}
            for row in reader
        ]


def timed(fn):
    """Run fn(), returning (result, elapsed milliseconds)."""
    started = time.perf_counter()
    result = fn()
    return result, int(round((time.perf_counter() - started) * 1000.0))
