"""The federated training engine.

Each round: sample clients, run local training per strategy, average the
updates, apply the server rule, evaluate the global model. Strategies:

    fedavg         local SGD, server adds the mean delta
    vanilla_adam   local Adam with the classic 1-beta^t correction;
                   moments reset to zero every round and are never
                   aggregated (nothing but the model travels), which is
                   exactly what makes client moment states drift apart
    fedcada        local Adam with an add-form correction; the server
                   averages final (m, v) across selected clients and
                   broadcasts them with the model next round
    fedadam        local SGD, server applies Adam (no bias correction)
                   to the mean delta
    fedams         fedadam plus an elementwise running max of the second
                   moment in the denominator (AMSGrad style)

Determinism: every random choice derives from the root seed through
named substreams (see seeding), and aggregation reduces in ascending
client id with pairwise summation, so sequential and concurrent
execution give bit-identical results.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from . import seeding
from .data import ClientShard, Dataset, build_global_test
from .errors import ConfigError, DivergenceError, NonFiniteGradientError
from .metrics import RoundLog, mean_offdiagonal, moment_cka_matrix, summarize_round
from .nn import Batch, MlpSpec, ParamVector, evaluate, init_params, loss_and_grad
from .optim import AdamHyper, CorrectionMode, MomentState, adam_step, sgd_step

BYTES_PER_REAL = 8


class StrategyKind(Enum):
    FEDAVG = "fedavg"
    VANILLA_ADAM = "vanilla_adam"
    FEDCADA = "fedcada"
    FEDADAM = "fedadam"
    FEDAMS = "fedams"


@dataclass(frozen=True)
class Strategy:
    kind: StrategyKind
    correction: CorrectionMode | None = None

    def __post_init__(self):
        if self.kind is StrategyKind.FEDCADA:
            if self.correction is None:
                raise ConfigError("fedcada requires a correction mode")
        elif self.correction is not None:
            raise ConfigError(f"{self.kind.value} does not take a correction mode")

    @property
    def uses_client_adam(self) -> bool:
        return self.kind in (StrategyKind.VANILLA_ADAM, StrategyKind.FEDCADA)

    @property
    def broadcasts_moments(self) -> bool:
        return self.kind is StrategyKind.FEDCADA

    @property
    def server_adaptive(self) -> bool:
        return self.kind in (StrategyKind.FEDADAM, StrategyKind.FEDAMS)

    @property
    def client_correction(self) -> CorrectionMode:
        if self.kind is StrategyKind.FEDCADA:
            return self.correction
        return CorrectionMode.VANILLA_SUBTRACT


@dataclass(frozen=True)
class FedConfig:
    num_clients: int
    select_ratio: float
    rounds: int
    local_epochs: int
    batch_size: int
    eta_l: float
    eta_g: float
    adam: AdamHyper
    seed: int
    correction_clock: str = "round"
    weighted_aggregation: bool = False

    def __post_init__(self):
        if self.num_clients < 1:
            raise ConfigError("num_clients must be >= 1")
        if not 0.0 < self.select_ratio <= 1.0:
            raise ConfigError(f"select_ratio must lie in (0, 1], got {self.select_ratio}")
        if self.rounds < 0:
            raise ConfigError("rounds must be >= 0")
        if self.local_epochs < 1 or self.batch_size < 1:
            raise ConfigError("local_epochs and batch_size must be >= 1")
        if self.eta_l <= 0 or self.eta_g <= 0:
            raise ConfigError("learning rates must be positive")
        if self.correction_clock not in ("round", "cumulative_local_step"):
            raise ConfigError(f"unknown correction_clock {self.correction_clock!r}")


@dataclass
class ServerState:
    round: int
    x: ParamVector
    global_moments: MomentState | None = None  # fedcada broadcast state
    server_m: np.ndarray | None = None
    server_v: np.ndarray | None = None
    server_vhat: np.ndarray | None = None


@dataclass
class ClientUpdate:
    client_id: int
    delta: ParamVector
    final_m: np.ndarray
    final_v: np.ndarray
    num_samples: int
    mean_train_loss: float


@dataclass
class TrainingResult:
    round_logs: list[RoundLog]
    final_state: ServerState
    cka_m: np.ndarray | None = None  # last computed client moment CKA matrices
    cka_v: np.ndarray | None = None


def initial_server_state(strategy: Strategy, x: ParamVector) -> ServerState:
    state = ServerState(round=0, x=x)
    if strategy.broadcasts_moments:
        state.global_moments = MomentState.zeros(x.dim)
    if strategy.server_adaptive:
        state.server_m = np.zeros(x.dim)
        state.server_v = np.zeros(x.dim)
        state.server_vhat = np.zeros(x.dim)
    return state


def _ceil_exact(x: float) -> int:
    nearest = round(x)
    if abs(x - nearest) < 1e-9:
        return int(nearest)
    return int(math.ceil(x))


def sample_clients(num_clients: int, select_ratio: float, rng: np.random.Generator) -> np.ndarray:
    """ceil(ratio * N) distinct ids, uniform without replacement, sorted."""
    count = min(num_clients, max(1, _ceil_exact(select_ratio * num_clients)))
    return np.sort(rng.choice(num_clients, size=count, replace=False))


def run_client(
    strategy: Strategy,
    dataset: Dataset,
    shard: ClientShard,
    spec: MlpSpec,
    x_global: ParamVector,
    moments_global: MomentState | None,
    cfg: FedConfig,
    round_index: int,
    rng: np.random.Generator,
) -> ClientUpdate:
    """One client's local training for one round.

    The local model always starts from the broadcast model. fedcada also
    starts its moments from the broadcast moments; vanilla_adam resets
    them to zero (it receives none); SGD strategies keep no moments and
    report zero arrays. Runs local_epochs passes over the shard's train
    split in rng-shuffled order, keeping the last short batch.
    """
    if shard.train_idx.size == 0:
        raise ConfigError(f"client {shard.client_id} has no training data")
    x = ParamVector(x_global.values.copy(), x_global.manifest)
    state: MomentState | None = None
    if strategy.kind is StrategyKind.FEDCADA:
        if moments_global is None:
            raise ValueError("fedcada clients need the broadcast moment state")
        state = moments_global.copy()
    elif strategy.kind is StrategyKind.VANILLA_ADAM:
        state = MomentState.zeros(x.dim)

    n = shard.train_idx.size
    steps_per_epoch = -(-n // cfg.batch_size)
    total_steps = cfg.local_epochs * steps_per_epoch
    losses = []
    step = 0
    for _ in range(cfg.local_epochs):
        order = shard.train_idx[rng.permutation(n)]
        for start in range(0, n, cfg.batch_size):
            take = order[start : start + cfg.batch_size]
            batch = Batch(dataset.features[take], dataset.labels[take])
            loss, grad = loss_and_grad(spec, x, batch)
            losses.append(loss)
            step += 1
            if state is None:
                x = sgd_step(x, grad, cfg.eta_l)
            else:
                if cfg.correction_clock == "round":
                    t = round_index
                else:
                    t = (round_index - 1) * total_steps + step
                x, state = adam_step(x, grad, state, cfg.adam, strategy.client_correction, t)

    delta = ParamVector(x.values - x_global.values, x.manifest)
    if state is None:
        final_m = np.zeros(x.dim)
        final_v = np.zeros(x.dim)
    else:
        final_m, final_v = state.m, state.v
    return ClientUpdate(
        client_id=shard.client_id,
        delta=delta,
        final_m=final_m,
        final_v=final_v,
        num_samples=n,
        mean_train_loss=float(np.mean(losses)),
    )


def _pairwise_sum(rows: list[np.ndarray]) -> np.ndarray:
    if len(rows) == 1:
        return rows[0].copy()
    mid = len(rows) // 2
    return _pairwise_sum(rows[:mid]) + _pairwise_sum(rows[mid:])


def aggregate(
    updates: list[ClientUpdate], weighted: bool = False
) -> tuple[ParamVector, MomentState]:
    """Mean delta and mean final moments over the round's updates.

    Unweighted by default (every selected client counts equally);
    weighted=True weights by sample count instead. Reduction is in
    ascending client id with pairwise summation, so results never depend
    on completion order.
    """
    if not updates:
        raise ValueError("cannot aggregate an empty update list")
    ordered = sorted(updates, key=lambda u: u.client_id)
    length = ordered[0].delta.dim
    for u in ordered:
        if u.delta.dim != length or u.final_m.size != length or u.final_v.size != length:
            raise ValueError("client update vector lengths differ")
    if weighted:
        weights = [float(u.num_samples) for u in ordered]
        total = sum(weights)
        deltas = [w * u.delta.values for w, u in zip(weights, ordered)]
        ms = [w * u.final_m for w, u in zip(weights, ordered)]
        vs = [w * u.final_v for w, u in zip(weights, ordered)]
    else:
        total = float(len(ordered))
        deltas = [u.delta.values for u in ordered]
        ms = [u.final_m for u in ordered]
        vs = [u.final_v for u in ordered]
    delta_bar = _pairwise_sum(deltas) / total
    m_bar = _pairwise_sum(ms) / total
    v_bar = _pairwise_sum(vs) / total
    return ParamVector(delta_bar, ordered[0].delta.manifest), MomentState(m_bar, v_bar)


def server_update(
    strategy: Strategy,
    state: ServerState,
    delta_bar: ParamVector,
    eta_g: float,
    hyper: AdamHyper,
) -> ServerState:
    """Apply the strategy's server rule to the averaged delta.

    The delta is a pseudo-gradient already pointing downhill, so every
    rule adds its step. Server Adam/AMS use no bias correction.
    """
    if delta_bar.dim != state.x.dim:
        raise ValueError("delta length does not match the global model")
    d = delta_bar.values
    if strategy.server_adaptive:
        m = hyper.beta1 * state.server_m + (1.0 - hyper.beta1) * d
        v = hyper.beta2 * state.server_v + (1.0 - hyper.beta2) * (d * d)
        if strategy.kind is StrategyKind.FEDAMS:
            vhat = np.maximum(state.server_vhat, v)
            x = state.x.values + eta_g * m / (np.sqrt(vhat) + hyper.epsilon)
        else:
            vhat = state.server_vhat
            x = state.x.values + eta_g * m / (np.sqrt(v) + hyper.epsilon)
        return replace(
            state,
            round=state.round + 1,
            x=ParamVector(x, state.x.manifest),
            server_m=m,
            server_v=v,
            server_vhat=vhat,
        )
    x = state.x.values + eta_g * d
    return replace(state, round=state.round + 1, x=ParamVector(x, state.x.manifest))


def _check_shards(dataset: Dataset, shards: list[ClientShard], cfg: FedConfig) -> None:
    if len(shards) != cfg.num_clients:
        raise ConfigError(f"got {len(shards)} shards for {cfg.num_clients} clients")
    for i, shard in enumerate(shards):
        if shard.client_id != i:
            raise ConfigError("shards must be ordered by client id")
    joined = np.sort(np.concatenate([s.all_idx for s in shards]))
    if joined.size != dataset.size or not np.array_equal(joined, np.arange(dataset.size)):
        raise ConfigError("shards do not form an exact partition of the dataset")


def run_training(
    strategy: Strategy,
    cfg: FedConfig,
    dataset: Dataset,
    shards: list[ClientShard],
    spec: MlpSpec,
    *,
    cka_interval: int | None = None,
    workers: int = 1,
    on_round=None,
) -> TrainingResult:
    """Run cfg.rounds communication rounds and log each one.

    With a fixed seed the numeric content of every RoundLog (everything
    but wall_ms) is bit-reproducible, for any worker count. on_round, if
    given, is called as on_round(round_log, server_state) after each
    round. Raises DivergenceError (carrying the logs so far) when a loss
    goes non-finite.
    """
    _check_shards(dataset, shards, cfg)
    x = init_params(spec, seeding.substream_seed(cfg.seed, "init"))
    state = initial_server_state(strategy, x)
    test_idx = build_global_test(shards)
    if test_idx.size == 0:
        raise ConfigError("global test set is empty; shards were never split")
    test_batch = Batch(dataset.features[test_idx], dataset.labels[test_idx])
    payload_vectors = 3 if strategy.broadcasts_moments else 1

    logs: list[RoundLog] = []
    cka_m = cka_v = None
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for r in range(1, cfg.rounds + 1):
            started = time.perf_counter()
            selected = sample_clients(
                cfg.num_clients, cfg.select_ratio, seeding.stream(cfg.seed, "sample", r)
            )
            rngs = {int(i): seeding.stream(cfg.seed, "client", r, int(i)) for i in selected}

            def work(i: int) -> ClientUpdate:
                return run_client(
                    strategy, dataset, shards[i], spec, state.x,
                    state.global_moments, cfg, r, rngs[i],
                )

            try:
                if pool is not None:
                    updates = list(pool.map(work, (int(i) for i in selected)))
                else:
                    updates = [work(int(i)) for i in selected]
            except NonFiniteGradientError as exc:
                raise DivergenceError(f"round {r}: {exc}", logs) from exc

            delta_bar, moment_bar = aggregate(updates, cfg.weighted_aggregation)
            state = server_update(strategy, state, delta_bar, cfg.eta_g, cfg.adam)
            if strategy.broadcasts_moments:
                state.global_moments = moment_bar

            test_loss, test_acc = evaluate(spec, state.x, test_batch)
            train_loss = float(np.mean([u.mean_train_loss for u in updates]))

            offdiag_m = offdiag_v = None
            track_cka = (
                cka_interval is not None
                and strategy.uses_client_adam
                and len(updates) >= 2
                and (r % cka_interval == 0 or r == cfg.rounds)
            )
            if track_cka:
                moment_states = [MomentState(u.final_m, u.final_v) for u in updates]
                cka_m = moment_cka_matrix(moment_states, x.manifest, "m")
                cka_v = moment_cka_matrix(moment_states, x.manifest, "v")
                offdiag_m = mean_offdiagonal(cka_m)
                offdiag_v = mean_offdiagonal(cka_v)

            wall_ms = int(round((time.perf_counter() - started) * 1000.0))
            log = summarize_round(
                r, train_loss, test_loss, test_acc,
                len(selected) * payload_vectors * BYTES_PER_REAL * x.dim,
                wall_ms, offdiag_m, offdiag_v,
            )
            logs.append(log)
            if not (np.isfinite(train_loss) and np.isfinite(test_loss)):
                raise DivergenceError(f"non-finite loss at round {r}", logs)
            if on_round is not None:
                on_round(log, state)
    finally:
        if pool is not None:
            pool.shutdown()
    return TrainingResult(logs, state, cka_m, cka_v)
