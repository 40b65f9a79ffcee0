"""FedAvg rounds expressed as server-side SGD on pseudo-gradients.

A round collects ``delta_i = w_i - w_t`` from each participating client,
forms the sample-weighted average ``(1/n) * sum |D_i| * delta_i`` and moves
the global model by ``eta_s`` times that average. Unweighted FedAvg is the
equal-client-size special case of the same rule.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Literal

import numpy as np

from ._rng import derive_seed, stream
from .data import FederatedDataset
from .nn import (
    LabeledBatch,
    ModelArch,
    ParameterVector,
    init_model,
    loss_and_grad,
    per_sample_losses,
    predict_accuracy,
    sgd_step,
)

log = logging.getLogger(__name__)

Mode = Literal["standard", "puf_regular", "puf_special"]


@dataclass(frozen=True)
class ClientUpdate:
    delta: ParameterVector
    weight: int
    client_id: int

    def __post_init__(self):
        if self.weight < 1:
            raise ValueError(f"client {self.client_id}: weight must be >= 1, got {self.weight}")


@dataclass(frozen=True)
class RoundPlan:
    round_index: int
    retained: frozenset[int]
    targets: frozenset[int] = frozenset()
    eta_s: float = 1.0
    eta_r: float = 1.0
    eta_u: float = 0.0
    mode: Mode = "standard"

    def __post_init__(self):
        object.__setattr__(self, "retained", frozenset(self.retained))
        object.__setattr__(self, "targets", frozenset(self.targets))
        if self.retained & self.targets:
            raise ValueError(f"clients {sorted(self.retained & self.targets)} are both retained and targeted")
        if self.mode == "standard" and self.targets:
            raise ValueError("a standard round cannot have target clients")
        if self.mode == "puf_special" and self.retained:
            raise ValueError("PUF-Special rounds admit target clients only")
        if self.mode not in ("standard", "puf_regular", "puf_special"):
            raise ValueError(f"unknown round mode {self.mode!r}")


@dataclass(frozen=True)
class Hyper:
    """Client-side training settings."""

    epochs: int = 1
    lr: float = 0.1
    batch_size: int = 32
    lr_decay: float = 0.998
    eta_s: float = 1.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")

    def lr_at(self, round_index: int) -> float:
        return self.lr * self.lr_decay**round_index


@dataclass(frozen=True)
class RoundRecord:
    round_index: int
    test_acc: float
    train_loss: float
    clients: tuple[int, ...]
    mode: str


@dataclass
class TrainHistory:
    records: list[RoundRecord] = field(default_factory=list)
    # updates clients sent in the most recent round; only a stateful client
    # would keep these, and only PGA needs them
    last_updates: dict[int, ClientUpdate] = field(default_factory=dict, repr=False)
    last_n: int = 0

    def append(self, record: RoundRecord) -> None:
        if self.records and record.round_index <= self.records[-1].round_index:
            raise ValueError(
                f"round {record.round_index} does not follow round {self.records[-1].round_index}"
            )
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def to_rows(self) -> list[dict]:
        return [
            {
                "round_index": r.round_index,
                "test_acc": r.test_acc,
                "train_loss": r.train_loss,
                "clients": list(r.clients),
                "mode": r.mode,
            }
            for r in self.records
        ]


@dataclass
class EngineState:
    w: ParameterVector
    dataset: FederatedDataset
    history: TrainHistory = field(default_factory=TrainHistory)


def client_opt(
    client_data: LabeledBatch,
    w_t: ParameterVector,
    epochs: int,
    lr: float,
    batch_size: int,
    seed: int,
    client_id: int = 0,
) -> ClientUpdate:
    """Local mini-batch SGD from ``w_t``; returns ``w_final - w_t``.

    Batches are reshuffled every epoch from a stream keyed on ``seed``.
    The final batch of an epoch may be short.
    """
    if len(client_data) == 0:
        raise ValueError(f"client {client_id} has no data")
    if epochs < 1 or batch_size < 1:
        raise ValueError("epochs and batch_size must be >= 1")
    w = w_t
    if lr > 0:
        for epoch in range(epochs):
            order = stream(seed, "shuffle", epoch).permutation(len(client_data))
            for start in range(0, len(order), batch_size):
                _, grad = loss_and_grad(w, client_data.take(order[start:start + batch_size]))
                w = sgd_step(w, grad, lr)
    return ClientUpdate(w.with_values(w.values - w_t.values), len(client_data), client_id)


def aggregate(updates: Iterable[ClientUpdate], n: int) -> ParameterVector:
    """``(1/n) * sum(weight_i * delta_i)``, summed in ascending client id."""
    updates = sorted(updates, key=lambda u: u.client_id)
    if not updates:
        raise ValueError("no updates to aggregate")
    if n <= 0:
        raise ValueError(f"n must be positive, got {n}")
    ref = updates[0].delta
    total = np.zeros_like(ref.values)
    for u in updates:
        ref.check_compatible(u.delta)
        total = total + u.weight * u.delta.values
    return ref.with_values(total / n)


def server_step(w_t: ParameterVector, delta: ParameterVector, eta_s: float) -> ParameterVector:
    w_t.check_compatible(delta)
    return w_t.with_values(w_t.values + eta_s * delta.values)


def collect_updates(
    w_t: ParameterVector,
    dataset: FederatedDataset,
    clients: Iterable[int],
    hyper: Hyper,
    round_index: int,
    seed: int,
    n_jobs: int = 1,
) -> list[ClientUpdate]:
    """Run :func:`client_opt` on every listed client, in any order.

    Each client's shuffling seed depends only on ``(seed, round_index,
    client_id)``, so the result is the same for any ``n_jobs``.
    """
    clients = sorted(clients)
    lr = hyper.lr_at(round_index)

    def _one(cid: int) -> ClientUpdate:
        return client_opt(
            dataset.clients[cid],
            w_t,
            hyper.epochs,
            lr,
            hyper.batch_size,
            derive_seed(seed, "client", round_index, cid),
            client_id=cid,
        )

    if n_jobs > 1 and len(clients) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(_one, clients))
    return [_one(cid) for cid in clients]


def mean_loss(w: ParameterVector, batches: Iterable[LabeledBatch]) -> float:
    """Mean per-sample loss over the union of ``batches``."""
    losses = [per_sample_losses(w, b) for b in batches if len(b)]
    if not losses:
        raise ValueError("no samples")
    return float(np.concatenate(losses).mean())


def run_round(
    state: EngineState,
    plan: RoundPlan,
    hyper: Hyper,
    seed: int,
    n_jobs: int = 1,
) -> EngineState:
    if plan.mode != "standard":
        raise ValueError("run_round only handles standard rounds; use the unlearning strategies")
    if not plan.retained:
        raise ValueError("a standard round needs at least one participating client")
    ds = state.dataset
    updates = collect_updates(state.w, ds, plan.retained, hyper, plan.round_index, seed, n_jobs)
    n = sum(u.weight for u in updates)
    w_next = server_step(state.w, aggregate(updates, n), plan.eta_s)

    participants = tuple(sorted(plan.retained))
    test_acc = predict_accuracy(w_next, ds.test) if len(ds.test) else float("nan")
    history = TrainHistory(list(state.history.records), {u.client_id: u for u in updates}, n)
    history.append(
        RoundRecord(
            plan.round_index,
            test_acc,
            mean_loss(w_next, (ds.clients[c] for c in participants)),
            participants,
            plan.mode,
        )
    )
    return replace(state, w=w_next, history=history)


def _participants(num_clients: int, participation: str | int, seed: int, round_index: int) -> frozenset[int]:
    if participation == "all":
        return frozenset(range(num_clients))
    k = int(participation)
    if not 1 <= k <= num_clients:
        raise ValueError(f"cannot sample {k} of {num_clients} clients")
    picked = stream(seed, "participation", round_index).choice(num_clients, size=k, replace=False)
    return frozenset(int(c) for c in picked)


def train(
    dataset: FederatedDataset,
    arch: ModelArch,
    rounds: int,
    hyper: Hyper,
    participation: str | int = "all",
    seed: int = 0,
    clients: Iterable[int] | None = None,
    w0: ParameterVector | None = None,
    round_offset: int = 0,
    n_jobs: int = 1,
) -> tuple[ParameterVector, TrainHistory]:
    """Run ``rounds`` standard FedAvg rounds from a fresh (or given) model.

    ``clients`` restricts the pool (e.g. to drop unlearned clients);
    ``participation`` is ``"all"`` or a per-round sample size drawn from
    that pool. The client learning rate at round ``t`` is
    ``lr * lr_decay**t`` where ``t`` starts at ``round_offset``.
    """
    if rounds < 1:
        raise ValueError(f"rounds must be >= 1, got {rounds}")
    pool = sorted(range(dataset.num_clients) if clients is None else set(clients))
    if not pool:
        raise ValueError("no clients to train on")
    state = EngineState(init_model(arch, seed) if w0 is None else w0, dataset)
    for r in range(rounds):
        t = round_offset + r
        picked = _participants(len(pool), participation, seed, t)
        plan = RoundPlan(t, frozenset(pool[i] for i in picked), eta_s=hyper.eta_s)
        state = run_round(state, plan, hyper, seed, n_jobs)
        rec = state.history.records[-1]
        log.debug("round %d: test_acc=%.4f loss=%.4f", t, rec.test_acc, rec.train_loss)
    return state.w, state.history
