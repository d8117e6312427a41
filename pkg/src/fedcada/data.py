"""Datasets, synthetic data generation, IDX loading, and client partitioning.

Partitioners return one shard of indices per client; shards always form
an exact partition of the dataset. Splitting a shard 75/25 (default)
gives each client a private train/eval pair, and the union of the eval
parts serves as the server's global test set.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataFormatError

_MASK64 = (1 << 64) - 1
_IMAGE_MAGIC = 2051
_LABEL_MAGIC = 2049


@dataclass(frozen=True)
class Dataset:
    """Immutable feature matrix (n, d), integer labels (n,), class count."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        features = np.ascontiguousarray(self.features, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if features.ndim != 2 or features.shape[0] < 1:
            raise ConfigError("dataset features must be a non-empty (n, d) matrix")
        if labels.shape != (features.shape[0],):
            raise ConfigError("dataset labels must be one integer per sample")
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise ConfigError(
                f"dataset labels must lie in [0, {self.num_classes}),"
                f" found [{labels.min()}, {labels.max()}]"
            )
        if not np.isfinite(features).all():
            raise ConfigError("dataset features contain non-finite values")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class ClientShard:
    """A client's index sets into the parent dataset."""

    client_id: int
    train_idx: np.ndarray
    eval_idx: np.ndarray

    def __post_init__(self):
        train = np.asarray(self.train_idx, dtype=np.int64)
        ev = np.asarray(self.eval_idx, dtype=np.int64)
        if train.size == 0:
            raise ConfigError(f"client {self.client_id} has an empty train split")
        if np.intersect1d(train, ev).size:
            raise ConfigError(f"client {self.client_id} train/eval splits overlap")
        object.__setattr__(self, "train_idx", train)
        object.__setattr__(self, "eval_idx", ev)

    @property
    def all_idx(self) -> np.ndarray:
        return np.concatenate([self.train_idx, self.eval_idx])

    @property
    def size(self) -> int:
        return self.train_idx.size + self.eval_idx.size


@dataclass(frozen=True)
class PartitionSpec:
    """How to deal a dataset across clients."""

    mode: str  # "iid" or "dirichlet"
    num_clients: int
    alpha: float | None = None
    min_shard_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("iid", "dirichlet"):
            raise ConfigError(f"unknown partition mode {self.mode!r}")
        if self.mode == "dirichlet" and (self.alpha is None or self.alpha <= 0):
            raise ConfigError("dirichlet partitioning needs alpha > 0")
        if self.num_clients < 1:
            raise ConfigError("num_clients must be >= 1")
        if self.min_shard_size < 1:
            raise ConfigError("min_shard_size must be >= 1")


def _ceil_exact(x: float) -> int:
    # guards against float noise pushing an exact integer over the edge
    nearest = round(x)
    if abs(x - nearest) < 1e-9:
        return int(nearest)
    return int(math.ceil(x))


def make_synthetic_blobs(
    num_classes: int, dim: int, per_class: int, spread: float, seed: int
) -> Dataset:
    """Gaussian blobs, one per class, centered on fixed unit directions.

    Class centers depend only on (num_classes, dim), so different seeds
    share the same geometry and differ only in the noise; spread 0 makes
    every sample of a class identical to its center (scaled by 3).
    """
    if num_classes < 1 or dim < 1 or per_class < 1:
        raise ConfigError("num_classes, dim and per_class must be positive")
    if spread < 0:
        raise ConfigError("spread must be non-negative")
    center_rng = np.random.default_rng(np.random.SeedSequence([0xB10B5, num_classes, dim]))
    directions = center_rng.standard_normal((num_classes, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    centers = 3.0 * directions

    labels = np.repeat(np.arange(num_classes), per_class)
    noise_rng = np.random.default_rng(seed & _MASK64)
    features = centers[labels] + spread * noise_rng.standard_normal((labels.size, dim))
    return Dataset(features, labels, num_classes)


def _read_u32(handle, field: str) -> int:
    raw = handle.read(4)
    if len(raw) != 4:
        raise DataFormatError(f"truncated {field}")
    return int.from_bytes(raw, "big")


def load_idx(images_path, labels_path) -> Dataset:
    """Load an IDX image/label file pair (the FashionMNIST container).

    Headers are big-endian: images carry magic 2051 then count/rows/cols,
    labels carry magic 2049 then count. Pixels are scaled to [0, 1] by
    division by 255 and flattened row-major.
    """
    with open(images_path, "rb") as fh:
        magic = _read_u32(fh, "image magic")
        if magic != _IMAGE_MAGIC:
            raise DataFormatError(f"bad image magic {magic}, expected {_IMAGE_MAGIC}")
        count = _read_u32(fh, "image count")
        rows = _read_u32(fh, "image rows")
        cols = _read_u32(fh, "image cols")
        pixels = fh.read(count * rows * cols)
        if len(pixels) != count * rows * cols:
            raise DataFormatError(
                f"truncated image data: expected {count * rows * cols} bytes,"
                f" got {len(pixels)}"
            )
    with open(labels_path, "rb") as fh:
        magic = _read_u32(fh, "label magic")
        if magic != _LABEL_MAGIC:
            raise DataFormatError(f"bad label magic {magic}, expected {_LABEL_MAGIC}")
        label_count = _read_u32(fh, "label count")
        raw_labels = fh.read(label_count)
        if len(raw_labels) != label_count:
            raise DataFormatError(
                f"truncated label data: expected {label_count} bytes,"
                f" got {len(raw_labels)}"
            )
    if count != label_count:
        raise DataFormatError(f"image/label count mismatch: {count} vs {label_count}")

    features = np.frombuffer(pixels, dtype=np.uint8).astype(np.float64)
    features = features.reshape(count, rows * cols) / 255.0
    labels = np.frombuffer(raw_labels, dtype=np.uint8).astype(np.int64)
    return Dataset(features, labels, int(labels.max()) + 1)


def partition_iid(dataset: Dataset, num_clients: int, seed: int) -> list[ClientShard]:
    """Seeded shuffle dealt round-robin; shard sizes differ by at most 1."""
    if dataset.size < num_clients:
        raise ConfigError(
            f"cannot deal {dataset.size} samples to {num_clients} clients"
        )
    rng = np.random.default_rng(seed & _MASK64)
    perm = rng.permutation(dataset.size)
    return [
        ClientShard(i, np.sort(perm[i::num_clients]), np.empty(0, dtype=np.int64))
        for i in range(num_clients)
    ]


def partition_dirichlet(
    dataset: Dataset,
    num_clients: int,
    alpha: float,
    min_shard_size: int,
    seed: int,
) -> list[ClientShard]:
    """Non-IID partition: each class is split by a Dirichlet(alpha) draw.

    Per class, client proportions come from normalized Gamma(alpha, 1)
    draws and the class's shuffled samples are cut at the cumulative
    shares. A whole draw is rejected and resampled (at most 1000 times)
    until every client holds at least min_shard_size samples, which keeps
    the Dirichlet law conditioned on feasibility.
    """
    if alpha <= 0:
        raise ConfigError(f"alpha must be positive, got {alpha}")
    rng = np.random.default_rng(seed & _MASK64)
    class_indices = [np.flatnonzero(dataset.labels == c) for c in range(dataset.num_classes)]

    for _ in range(1000):
        buckets: list[list[np.ndarray]] = [[] for _ in range(num_clients)]
        feasible = True
        for idx in class_indices:
            shuffled = idx[rng.permutation(idx.size)]
            gammas = rng.gamma(alpha, 1.0, size=num_clients)
            total = gammas.sum()
            if not np.isfinite(total) or total <= 0.0:
                feasible = False  # degenerate draw at tiny alpha; consume and retry
                continue
            shares = gammas / total
            cuts = (np.cumsum(shares) * shuffled.size).astype(np.int64)[:-1]
            for client, part in enumerate(np.split(shuffled, cuts)):
                buckets[client].append(part)
        if not feasible:
            continue
        shards = [np.sort(np.concatenate(parts)) for parts in buckets]
        if min(s.size for s in shards) >= min_shard_size:
            return [
                ClientShard(i, shard, np.empty(0, dtype=np.int64))
                for i, shard in enumerate(shards)
            ]
    raise ConfigError(
        "dirichlet partition failed 1000 times to give every client"
        f" {min_shard_size} samples; lower min_shard_size or num_clients"
    )


def partition(dataset: Dataset, spec: PartitionSpec) -> list[ClientShard]:
    if spec.mode == "iid":
        return partition_iid(dataset, spec.num_clients, spec.seed)
    return partition_dirichlet(
        dataset, spec.num_clients, spec.alpha, spec.min_shard_size, spec.seed
    )


def split_train_eval(shard: ClientShard, train_fraction: float, seed: int) -> ClientShard:
    """Seeded shuffle, then split at ceil(train_fraction * size)."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    indices = shard.all_idx
    n_train = _ceil_exact(train_fraction * indices.size)
    if indices.size < 2 or n_train >= indices.size:
        raise ConfigError(
            f"client {shard.client_id} shard of size {indices.size} cannot be"
            f" split {train_fraction:.2f} with a non-empty eval part"
        )
    rng = np.random.default_rng(seed & _MASK64)
    shuffled = indices[rng.permutation(indices.size)]
    return ClientShard(
        shard.client_id,
        np.sort(shuffled[:n_train]),
        np.sort(shuffled[n_train:]),
    )


def build_global_test(shards: list[ClientShard]) -> np.ndarray:
    """Union of all clients' eval indices, deduplicated and sorted."""
    parts = [s.eval_idx for s in shards]
    return np.unique(np.concatenate(parts)) if parts else np.empty(0, dtype=np.int64)


def export_csv(dataset: Dataset, path) -> None:
    """Write the dataset as label,f0,...,f{d-1} rows with a header."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"f{j}" for j in range(dataset.dim)])
        for label, row in zip(dataset.labels, dataset.features):
            writer.writerow([int(label)] + [repr(float(x)) for x in row])


def load_csv(path) -> Dataset:
    """Read a dataset written by export_csv."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "label":
            raise DataFormatError("dataset csv must start with a label header")
        labels, rows = [], []
        for record in reader:
            labels.append(int(record[0]))
            rows.append([float(x) for x in record[1:]])
    if not rows:
        raise DataFormatError("dataset csv has no data rows")
    labels_arr = np.array(labels, dtype=np.int64)
    return Dataset(np.array(rows), labels_arr, int(labels_arr.max()) + 1)
