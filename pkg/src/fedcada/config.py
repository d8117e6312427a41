"""Experiment configuration: a line-oriented ``key = value`` format.

Blank lines are skipped and ``#`` starts a comment. Keys are dot-scoped;
unknown keys are a hard error. Defaults (applied when a key is absent):

    seed = 0
    strategy = fedcada              fedavg | vanilla_adam | fedcada |
                                    fedadam | fedams
    correction = add_geometric      fedcada only: vanilla_subtract |
                                    add_geometric | add_square |
                                    add_sine | add_sqrt | none
    fed.num_clients = 20
    fed.select_ratio = 1.0
    fed.rounds = 200
    fed.local_epochs = 3
    fed.batch_size = 32
    fed.eta_g = 1.0
    fed.weighted_aggregation = false
    optim.eta_l = 0.01
    optim.beta1 = 0.9
    optim.beta2 = 0.99
    optim.epsilon = 1e-8
    optim.correction_clock = round  round | cumulative_local_step
    model.hidden1 = 200
    model.hidden2 = 200
    data.source = synthetic         synthetic | idx
    data.classes = 10               synthetic only
    data.dim = 32                   synthetic only
    data.per_class = 200            synthetic only
    data.spread = 1.0               synthetic only
    data.images / data.labels       idx only, required file paths
    data.partition = dirichlet      dirichlet | iid
    data.alpha = 0.1
    data.min_shard_size = 8
    data.train_fraction = 0.75
    cka.interval = 25               every N rounds plus the final round;
                                    "none" disables tracking
    out.dir                         output directory; falls back to the
                                    FEDCADA_OUT environment variable
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace

from .errors import ConfigError
from .federation import FedConfig, Strategy, StrategyKind
from .optim import AdamHyper, CorrectionMode

_STRATEGIES = {kind.value: kind for kind in StrategyKind}
_CORRECTIONS = {mode.value: mode for mode in CorrectionMode}


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    strategy: StrategyKind = StrategyKind.FEDCADA
    correction: CorrectionMode = CorrectionMode.ADD_GEOMETRIC
    num_clients: int = 20
    select_ratio: float = 1.0
    rounds: int = 200
    local_epochs: int = 3
    batch_size: int = 32
    eta_g: float = 1.0
    weighted_aggregation: bool = False
    eta_l: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.99
    epsilon: float = 1e-8
    correction_clock: str = "round"
    hidden1: int = 200
    hidden2: int = 200
    data_source: str = "synthetic"
    data_classes: int = 10
    data_dim: int = 32
    data_per_class: int = 200
    data_spread: float = 1.0
    data_images: str | None = None
    data_labels: str | None = None
    partition_mode: str = "dirichlet"
    alpha: float = 0.1
    min_shard_size: int = 8
    train_fraction: float = 0.75
    cka_interval: int | None = 25
    out_dir: str | None = None

    def to_strategy(self) -> Strategy:
        if self.strategy is StrategyKind.FEDCADA:
            return Strategy(self.strategy, self.correction)
        return Strategy(self.strategy)

    def to_fed_config(self) -> FedConfig:
        return FedConfig(
            num_clients=self.num_clients,
            select_ratio=self.select_ratio,
            rounds=self.rounds,
            local_epochs=self.local_epochs,
            batch_size=self.batch_size,
            eta_l=self.eta_l,
            eta_g=self.eta_g,
            adam=AdamHyper(self.eta_l, self.beta1, self.beta2, self.epsilon),
            seed=self.seed,
            correction_clock=self.correction_clock,
            weighted_aggregation=self.weighted_aggregation,
        )

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, (StrategyKind, CorrectionMode)):
                value = value.value
            out[f.name] = value
        return out


def _parse_bool(raw: str) -> bool:
    lowered = raw.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    raise ValueError(f"expected true or false, got {raw!r}")


def _parse_optional_int(raw: str):
    if raw.lower() in ("none", "off", "0"):
        return None
    return int(raw)


def _enum(table: dict, what: str):
    def convert(raw: str):
        if raw not in table:
            raise ValueError(f"unknown {what} {raw!r}; one of {sorted(table)}")
        return table[raw]

    return convert


# key -> (config attribute, converter)
_SCHEMA = {
    "seed": ("seed", int),
    "strategy": ("strategy", _enum(_STRATEGIES, "strategy")),
    "correction": ("correction", _enum(_CORRECTIONS, "correction mode")),
    "fed.num_clients": ("num_clients", int),
    "fed.select_ratio": ("select_ratio", float),
    "fed.rounds": ("rounds", int),
    "fed.local_epochs": ("local_epochs", int),
    "fed.batch_size": ("batch_size", int),
    "fed.eta_g": ("eta_g", float),
    "fed.weighted_aggregation": ("weighted_aggregation", _parse_bool),
    "optim.eta_l": ("eta_l", float),
    "optim.beta1": ("beta1", float),
    "optim.beta2": ("beta2", float),
    "optim.epsilon": ("epsilon", float),
    "optim.correction_clock": ("correction_clock", str),
    "model.hidden1": ("hidden1", int),
    "model.hidden2": ("hidden2", int),
    "data.source": ("data_source", str),
    "data.classes": ("data_classes", int),
    "data.dim": ("data_dim", int),
    "data.per_class": ("data_per_class", int),
    "data.spread": ("data_spread", float),
    "data.images": ("data_images", str),
    "data.labels": ("data_labels", str),
    "data.partition": ("partition_mode", str),
    "data.alpha": ("alpha", float),
    "data.min_shard_size": ("min_shard_size", int),
    "data.train_fraction": ("train_fraction", float),
    "cka.interval": ("cka_interval", _parse_optional_int),
    "out.dir": ("out_dir", str),
}

_OPEN_UNIT = {"optim.beta1", "optim.beta2", "data.train_fraction"}
_POSITIVE = {
    "fed.num_clients", "fed.rounds", "fed.local_epochs", "fed.batch_size",
    "fed.eta_g", "optim.eta_l", "optim.epsilon", "model.hidden1",
    "model.hidden2", "data.classes", "data.dim", "data.per_class",
    "data.alpha", "data.min_shard_size",
}


def _validate_value(key: str, value) -> None:
    if key in _OPEN_UNIT and not 0.0 < value < 1.0:
        raise ConfigError(f"{key}: must lie in (0, 1), got {value}")
    if key in _POSITIVE and value <= 0:
        if key == "fed.rounds" and value == 0:
            return  # rounds = 0 runs no training but is a valid request
        raise ConfigError(f"{key}: must be positive, got {value}")
    if key == "fed.select_ratio" and not 0.0 < value <= 1.0:
        raise ConfigError(f"{key}: must lie in (0, 1], got {value}")
    if key == "data.spread" and value < 0:
        raise ConfigError(f"{key}: must be non-negative, got {value}")
    if key == "cka.interval" and value is not None and value < 1:
        raise ConfigError(f"{key}: must be >= 1 or none, got {value}")
    if key == "optim.correction_clock" and value not in ("round", "cumulative_local_step"):
        raise ConfigError(f"{key}: must be round or cumulative_local_step, got {value!r}")
    if key == "data.source" and value not in ("synthetic", "idx"):
        raise ConfigError(f"{key}: must be synthetic or idx, got {value!r}")
    if key == "data.partition" and value not in ("iid", "dirichlet"):
        raise ConfigError(f"{key}: must be iid or dirichlet, got {value!r}")


def _read_pairs(path) -> dict[str, str]:
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {text!r}")
        key, raw = (part.strip() for part in text.split("=", 1))
        if key not in _SCHEMA:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if not raw:
            raise ConfigError(f"{path}:{lineno}: empty value for {key!r}")
        if key in pairs:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        pairs[key] = raw
    return pairs


def parse_config(path) -> ExperimentConfig:
    """Read, convert, and fully validate a config file."""
    pairs = _read_pairs(path)
    resolved = {}
    for key, raw in pairs.items():
        attr, convert = _SCHEMA[key]
        try:
            value = convert(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from exc
        _validate_value(key, value)
        resolved[attr] = value

    cfg = ExperimentConfig(**resolved)
    if "correction" in resolved and cfg.strategy is not StrategyKind.FEDCADA:
        raise ConfigError(
            f"correction: only valid with strategy = fedcada, not {cfg.strategy.value}"
        )
    if cfg.data_source == "idx":
        for key, value in (("data.images", cfg.data_images), ("data.labels", cfg.data_labels)):
            if value is None:
                raise ConfigError(f"{key}: required when data.source = idx")
            if not os.path.exists(value):
                raise ConfigError(f"{key}: file not found: {value}")
    cfg.to_fed_config()  # surfaces any remaining cross-field violations
    return cfg


def resolve_out_dir(cli_out: str | None, cfg: ExperimentConfig) -> str:
    """Precedence: --out flag, then out.dir, then $FEDCADA_OUT, then ./out."""
    return cli_out or cfg.out_dir or os.environ.get("FEDCADA_OUT") or "out"


def with_overrides(cfg: ExperimentConfig, seed: int | None = None) -> ExperimentConfig:
    if seed is None:
        return cfg
    return replace(cfg, seed=seed)
