"""Deterministic federated learning simulator.

Implements FedCAda (client-side Adam with an additive bias-correction
denominator and server-side aggregation of optimizer moments) next to
FedAvg, vanilla client Adam, FedAdam, and FedAMS baselines, with linear
CKA diagnostics for moment heterogeneity.
"""

from .config import ExperimentConfig, parse_config
from .data import ClientShard, Dataset, PartitionSpec
from .federation import (
    ClientUpdate,
    FedConfig,
    ServerState,
    Strategy,
    StrategyKind,
    TrainingResult,
    run_training,
)
from .metrics import RoundLog, linear_cka, moment_cka_matrix
from .nn import Batch, MlpSpec, ParamVector
from .optim import AdamHyper, CorrectionMode, MomentState

__version__ = "0.1.0"

__all__ = [
    "AdamHyper",
    "Batch",
    "ClientShard",
    "ClientUpdate",
    "CorrectionMode",
    "Dataset",
    "ExperimentConfig",
    "FedConfig",
    "MlpSpec",
    "MomentState",
    "ParamVector",
    "PartitionSpec",
    "RoundLog",
    "ServerState",
    "Strategy",
    "StrategyKind",
    "TrainingResult",
    "linear_cka",
    "moment_cka_matrix",
    "parse_config",
    "run_training",
]
