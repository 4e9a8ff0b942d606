"""Synchronous federated rounds: selection, local training, aggregation."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .cost import CostConstants, Overheads, round_overheads
from .errors import AggregationFault, ConfigError, TrainingFault
from .model import LocalTrainReport, ModelParams, evaluate, local_train
from .population import ClientPopulation

_SELECT, _TRAIN = 101, 102

AGGREGATORS = ("fedavg", "fednova", "fedadagrad")


@dataclass(frozen=True)
class HyperParams:
    M: int
    E: float

    def validate(self, K: int) -> None:
        if not 1 <= self.M <= K:
            raise ConfigError(f"M={self.M} outside [1, {K}]", "M")
        if not self.E > 0:
            raise ConfigError(f"E={self.E} must be > 0", "E")


@dataclass
class AggregatorState:
    kind: str = "fedavg"
    server_lr: float = 0.1
    beta1: float = 0.0
    tau: float = 1e-3
    accumulator: np.ndarray | None = None
    momentum: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.kind not in AGGREGATORS:
            raise ConfigError(f"unknown aggregator {self.kind!r}", "aggregator")
        if not self.tau > 0:
            raise ConfigError("must be > 0", "tau")


@dataclass(frozen=True)
class TrainSettings:
    batch_size: int = 5
    lr: float = 0.01
    momentum: float = 0.9
    seed: int = 0


@dataclass(frozen=True)
class RoundRecord:
    round: int
    hyper: HyperParams
    participant_ids: tuple[int, ...]
    max_nk: int
    sum_nk: int
    accuracy: float
    overheads: Overheads
    local_updates: tuple[int, ...] = field(default=(), compare=False)


def select_participants(r: int, M: int, population: ClientPopulation, seed: int) -> tuple[int, ...]:
    """Uniform M-subset of client positions, sorted; fixed by ``(seed, r)``."""
    K = population.num_clients
    if not 1 <= M <= K:
        raise ConfigError(f"M={M} outside [1, {K}]", "M")
    picked = np.random.default_rng([seed, _SELECT, r]).choice(K, size=M, replace=False)
    return tuple(sorted(int(i) for i in picked))


def _check(global_params: ModelParams, reports: Sequence[tuple[LocalTrainReport, int]]) -> np.ndarray:
    if not reports:
        raise AggregationFault("no reports to aggregate")
    P = global_params.w.shape[0]
    for rep, _ in reports:
        if rep.params.w.shape != (P,):
            raise AggregationFault(f"parameter length {rep.params.w.shape[0]} != {P}")
    n = np.array([nk for _, nk in reports], dtype=np.float64)
    return n / n.sum()


def aggregate_fedavg(global_params: ModelParams, reports: Sequence[tuple[LocalTrainReport, int]]) -> ModelParams:
    p = _check(global_params, reports)
    w = np.zeros_like(global_params.w)
    for pk, (rep, _) in zip(p, reports):
        w += pk * rep.params.w
    return ModelParams(w, global_params.arch)


def aggregate_fednova(global_params: ModelParams, reports: Sequence[tuple[LocalTrainReport, int]]) -> ModelParams:
    """Normalized averaging: each delta is divided by its local step count,
    then the weighted mean is rescaled by the weighted mean step count."""
    p = _check(global_params, reports)
    u = np.array([rep.num_local_updates for rep, _ in reports], dtype=np.float64)
    if (u < 1).any():
        raise AggregationFault("every report needs at least one local update")
    direction = np.zeros_like(global_params.w)
    for pk, uk, (rep, _) in zip(p, u, reports):
        direction += (pk / uk) * (rep.params.w - global_params.w)
    return ModelParams(global_params.w + float(p @ u) * direction, global_params.arch)


def aggregate_fedadagrad(
    state: AggregatorState, global_params: ModelParams, reports: Sequence[tuple[LocalTrainReport, int]]
) -> tuple[ModelParams, AggregatorState]:
    if state.kind != "fedadagrad":
        raise AggregationFault(f"aggregator state is {state.kind!r}, not fedadagrad")
    p = _check(global_params, reports)
    g = np.zeros_like(global_params.w)
    for pk, (rep, _) in zip(p, reports):
        g += pk * (rep.params.w - global_params.w)
    m = g * (1 - state.beta1) if state.momentum is None else state.beta1 * state.momentum + (1 - state.beta1) * g
    a = g * g if state.accumulator is None else state.accumulator + g * g
    w = global_params.w + state.server_lr * m / (np.sqrt(a) + state.tau)
    return ModelParams(w, global_params.arch), replace(state, accumulator=a, momentum=m)


def aggregate(
    state: AggregatorState, global_params: ModelParams, reports: Sequence[tuple[LocalTrainReport, int]]
) -> tuple[ModelParams, AggregatorState]:
    if state.kind == "fedavg":
        return aggregate_fedavg(global_params, reports), state
    if state.kind == "fednova":
        return aggregate_fednova(global_params, reports), state
    return aggregate_fedadagrad(state, global_params, reports)


def run_round(
    r: int,
    global_params: ModelParams,
    hyper: HyperParams,
    train: ClientPopulation,
    test: ClientPopulation,
    state: AggregatorState,
    costs: CostConstants,
    settings: TrainSettings,
) -> tuple[ModelParams, AggregatorState, RoundRecord]:
    hyper.validate(train.num_clients)
    ids = select_participants(r, hyper.M, train, settings.seed)
    reports = []
    for pos in ids:
        client = train.clients[pos]
        try:
            rep = local_train(
                global_params,
                client,
                hyper.E,
                settings.batch_size,
                settings.lr,
                settings.momentum,
                seed=[settings.seed, _TRAIN, r, client.client_id],
            )
        except TrainingFault as exc:
            raise TrainingFault("local training failed", round_index=r, client_id=client.client_id) from exc
        reports.append((rep, client.n_k))
    try:
        new_params, state = aggregate(state, global_params, reports)
    except AggregationFault as exc:
        raise AggregationFault(f"round {r}: {exc}") from exc
    n_sel = [nk for _, nk in reports]
    record = RoundRecord(
        round=r,
        hyper=hyper,
        participant_ids=tuple(train.clients[i].client_id for i in ids),
        max_nk=max(n_sel),
        sum_nk=sum(n_sel),
        accuracy=evaluate(new_params, test),
        overheads=round_overheads(costs, hyper.M, hyper.E, n_sel),
        local_updates=tuple(rep.num_local_updates for rep, _ in reports),
    )
    return new_params, state, record
