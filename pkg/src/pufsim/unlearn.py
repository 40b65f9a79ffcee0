"""Unlearning strategies and the recovery driver.

PUF reuses the ordinary client training path: target clients train as in
any FedAvg round and the server flips the sign of their aggregated update
and scales it by ``eta_u``. ``puf_regular_round`` folds this into a normal
round with the retained clients; ``puf_special_round`` runs a dedicated
round with the targets alone.

Baselines: Natural (do nothing), Retrain (train without the targets from
scratch), NoT (negate the first layer's weights) and PGA (projected
gradient ascent on the forget data around a reference model).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Literal

import numpy as np

from ._rng import derive_seed, stream
from .data import FederatedDataset, ForgetSplit, select_forget_subset
from .engine import (
    ClientUpdate,
    EngineState,
    Hyper,
    RoundPlan,
    TrainHistory,
    aggregate,
    collect_updates,
    run_round,
    train,
)
from .nn import (
    LabeledBatch,
    ModelArch,
    ParameterVector,
    init_model,
    is_bias,
    loss_and_grad,
    per_sample_losses,
    predict_accuracy,
)

Strategy = Literal["puf_regular", "puf_special", "not", "pga", "natural", "retrain"]
STRATEGIES = ("puf_regular", "puf_special", "not", "pga", "natural", "retrain")


class UnlearningError(RuntimeError):
    pass


class MissingClientStateError(UnlearningError):
    """PGA needs the target's last update, which only a stateful client keeps."""


@dataclass(frozen=True)
class PgaParams:
    ascent_epochs: int = 5
    clip_threshold: float = 5.0
    ball_radius: float = 1.0
    early_stop_loss_threshold: float | None = None
    batch_size: int = 512
    lr: float = 0.1

    def __post_init__(self):
        if self.ascent_epochs < 1 or self.batch_size < 1:
            raise ValueError("ascent_epochs and batch_size must be >= 1")
        if self.clip_threshold <= 0 or self.lr <= 0:
            raise ValueError("clip_threshold and lr must be positive")
        if self.ball_radius < 0:
            raise ValueError("ball_radius must be non-negative")
        if self.early_stop_loss_threshold is not None and self.early_stop_loss_threshold <= 0:
            raise ValueError("early_stop_loss_threshold must be positive")


@dataclass(frozen=True)
class UnlearnRequest:
    targets: frozenset[int]
    strategy: Strategy
    scope: Literal["client", "sample"] = "client"
    fraction: float = 0.5
    seed: int = 0
    eta_r: float = 1.0
    eta_u: float | None = None
    pga: PgaParams = field(default_factory=PgaParams)
    not_include_bias: bool = False

    def __post_init__(self):
        object.__setattr__(self, "targets", frozenset(int(t) for t in self.targets))
        if not self.targets:
            raise ValueError("an unlearning request needs at least one target")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.scope not in ("client", "sample"):
            raise ValueError(f"unknown scope {self.scope!r}")
        if self.scope == "sample" and not 0 < self.fraction < 1:
            raise ValueError("fraction must lie in (0, 1) for sample scope")

    @property
    def unlearning_rate(self) -> float:
        if self.eta_u is not None:
            return self.eta_u
        return default_eta_u(self.strategy)


def default_eta_u(strategy: str) -> float:
    return 20.0 if strategy == "puf_regular" else 2.0


@dataclass(frozen=True)
class ScopedViews:
    """What each phase sees of the federation.

    ``unlearn`` is the dataset the unlearning round trains on (targets hold
    only their forget data under sample scope). ``recovery`` and
    ``recovery_clients`` define the recovery and retrain federations.
    """

    unlearn: FederatedDataset
    recovery: FederatedDataset
    recovery_clients: tuple[int, ...]
    forget_data: LabeledBatch
    splits: dict[int, ForgetSplit] = field(default_factory=dict)


def sample_scope_filter(request: UnlearnRequest, dataset: FederatedDataset) -> ScopedViews:
    for t in request.targets:
        if not 0 <= t < dataset.num_clients:
            raise ValueError(f"target {t} is not a client of this federation")
    targets = sorted(request.targets)
    if request.scope == "client":
        keep = tuple(c for c in range(dataset.num_clients) if c not in request.targets)
        forget = LabeledBatch.concat([dataset.clients[t] for t in targets])
        return ScopedViews(dataset, dataset, keep, forget)

    splits = {
        t: select_forget_subset(dataset.clients[t], request.fraction, derive_seed(request.seed, "forget", t), t)
        for t in targets
    }
    unlearn_view, recovery_view = dataset, dataset
    for t, split in splits.items():
        unlearn_view = unlearn_view.replace_client(t, split.forget)
        recovery_view = recovery_view.replace_client(t, split.retain)
    forget = LabeledBatch.concat([splits[t].forget for t in targets])
    return ScopedViews(unlearn_view, recovery_view, tuple(range(dataset.num_clients)), forget, splits)


def puf_regular_round(
    w_t: ParameterVector,
    dataset: FederatedDataset,
    s_plus: Iterable[int],
    s_minus: Iterable[int],
    eta_r: float,
    eta_u: float,
    hyper: Hyper,
    seed: int,
    round_index: int = 0,
    n_jobs: int = 1,
) -> ParameterVector:
    """``w_t + eta_r * D+ - eta_u * D-`` with both aggregates sharing n."""
    plan = RoundPlan(round_index, frozenset(s_plus), frozenset(s_minus), hyper.eta_s, eta_r, eta_u, "puf_regular")
    if not plan.retained:
        raise ValueError("PUF-Regular needs retained clients; use puf_special_round for a targets-only round")
    return _puf_apply(w_t, dataset, plan, hyper, seed, n_jobs)


def puf_special_round(
    w_t: ParameterVector,
    dataset: FederatedDataset,
    s_minus: Iterable[int],
    eta_u: float,
    hyper: Hyper,
    seed: int,
    round_index: int = 0,
    n_jobs: int = 1,
) -> ParameterVector:
    """Targets train as usual; the server applies ``w_t - eta_u * D-``."""
    plan = RoundPlan(round_index, frozenset(), frozenset(s_minus), hyper.eta_s, 0.0, eta_u, "puf_special")
    if not plan.targets:
        raise ValueError("PUF-Special needs at least one target client")
    return _puf_apply(w_t, dataset, plan, hyper, seed, n_jobs)


def _puf_apply(w_t, dataset, plan: RoundPlan, hyper, seed, n_jobs) -> ParameterVector:
    # same client code path as a standard round
    updates = collect_updates(w_t, dataset, plan.retained | plan.targets, hyper, plan.round_index, seed, n_jobs)
    n = sum(u.weight for u in updates)
    plus = [u for u in updates if u.client_id in plan.retained]
    minus = [u for u in updates if u.client_id in plan.targets]
    return combine_puf(w_t, plus, minus, n, plan.eta_r, plan.eta_u)


def combine_puf(
    w_t: ParameterVector,
    plus: list[ClientUpdate],
    minus: list[ClientUpdate],
    n: int,
    eta_r: float,
    eta_u: float,
) -> ParameterVector:
    """Server side of PUF for already-collected updates."""
    step = np.zeros_like(w_t.values)
    if plus:
        step = step + eta_r * aggregate(plus, n).values
    if minus:
        step = step - eta_u * aggregate(minus, n).values
    return w_t.with_values(w_t.values + step)


def not_unlearn(w_t: ParameterVector, include_bias: bool = False) -> ParameterVector:
    """Negate the first layer's weights (and optionally its bias)."""
    if not w_t.schema:
        raise ValueError("model has no layers")
    values = w_t.values.copy()
    first = w_t.schema[0][0]
    values[w_t.layer_slice(first)] *= -1.0
    if include_bias and len(w_t.schema) > 1 and is_bias(w_t.schema[1][0]):
        values[w_t.layer_slice(w_t.schema[1][0])] *= -1.0
    return w_t.with_values(values)


def make_pga_reference(
    w_t: ParameterVector,
    last_target_update: ClientUpdate | Iterable[ClientUpdate] | None,
    n_last: int,
) -> ParameterVector:
    """Remove the targets' last weighted contribution from ``w_t``."""
    if last_target_update is None:
        raise MissingClientStateError(
            "PGA builds its reference model from the target's last update; "
            "that update was not stored (PGA requires stateful clients)"
        )
    updates = [last_target_update] if isinstance(last_target_update, ClientUpdate) else list(last_target_update)
    if not updates:
        raise MissingClientStateError("no stored update for the target clients")
    if n_last <= 0:
        raise ValueError("n_last must be positive")
    return w_t.with_values(w_t.values - aggregate(updates, n_last).values)


def _project(w: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    gap = w - center
    dist = float(np.linalg.norm(gap))
    if dist <= radius:
        return w
    if radius == 0.0:
        return center.copy()
    return center + gap * (radius / dist)


def pga_unlearn(
    w_t: ParameterVector,
    target_data: LabeledBatch,
    w_ref: ParameterVector,
    params: PgaParams,
    seed: int,
) -> ParameterVector:
    """Projected gradient ascent on ``target_data``.

    Starts at ``w_t`` projected into the ball of radius ``ball_radius``
    around ``w_ref``. Each step climbs the mean loss of one batch with the
    gradient clipped to ``clip_threshold`` in L2 norm, then projects back
    onto the ball when it leaves it. Stops once the mean loss over the whole
    target set reaches ``early_stop_loss_threshold``.
    """
    w_t.check_compatible(w_ref)
    if len(target_data) == 0:
        raise ValueError("no target data")
    center = w_ref.values
    w = _project(w_t.values.copy(), center, params.ball_radius)
    threshold = params.early_stop_loss_threshold
    for epoch in range(params.ascent_epochs):
        order = stream(seed, "pga", epoch).permutation(len(target_data))
        for start in range(0, len(order), params.batch_size):
            loss, grad = loss_and_grad(w_t.with_values(w), target_data.take(order[start:start + params.batch_size]))
            if not np.isfinite(loss):
                raise UnlearningError("forget loss diverged during gradient ascent")
            g = grad.values
            norm = float(np.linalg.norm(g))
            if norm > params.clip_threshold:
                g = g * (params.clip_threshold / norm)
            w = _project(w + params.lr * g, center, params.ball_radius)
            if not np.all(np.isfinite(w)):
                raise UnlearningError("parameters diverged during gradient ascent")
            if threshold is not None:
                forget_loss = float(per_sample_losses(w_t.with_values(w), target_data).mean())
                if not np.isfinite(forget_loss):
                    raise UnlearningError("forget loss diverged during gradient ascent")
                if forget_loss >= threshold:
                    return w_t.with_values(w)
    return w_t.with_values(w)


def pga_default_threshold(num_classes: int, iid: bool) -> float:
    """Early-stop loss for PGA, rescaled to a ``num_classes``-way model.

    The reference thresholds (9.0 IID, 6.5 non-IID) were tuned for a
    100-class model; they are expressed as multiples of the chance-level
    loss ``ln(100)`` and mapped onto ``ln(num_classes)``.
    """
    base = 9.0 if iid else 6.5
    return base / np.log(100.0) * np.log(max(num_classes, 2))


def pga_default_radius(w_ref: ParameterVector, arch: ModelArch, seed: int) -> float:
    """One third of the distance from ``w_ref`` to a freshly initialised model."""
    return float(np.linalg.norm(w_ref.values - init_model(arch, derive_seed(seed, "pga_radius")).values)) / 3.0


def retrain_baseline(
    dataset: FederatedDataset,
    targets: Iterable[int],
    arch: ModelArch,
    rounds: int,
    hyper: Hyper,
    seed: int,
    participation: str | int = "all",
    n_jobs: int = 1,
) -> tuple[ParameterVector, TrainHistory]:
    """FedAvg from scratch with ``targets`` excluded from every round."""
    targets = set(targets)
    if not targets:
        raise ValueError("retraining needs at least one target to exclude")
    keep = [c for c in range(dataset.num_clients) if c not in targets]
    return train(dataset, arch, rounds, hyper, participation, seed, clients=keep, n_jobs=n_jobs)


def first_round_reaching(accuracies: Iterable[float], target: float) -> int | None:
    """Index of the first accuracy ``>= target`` (index 0 is the start model)."""
    for i, acc in enumerate(accuracies):
        if acc >= target:
            return i
    return None


@dataclass(frozen=True)
class CurvePoint:
    round: int
    test_acc: float
    forget_acc: float | None


@dataclass
class RecoveryResult:
    w: ParameterVector
    rounds: int
    capped: bool
    curve: list[CurvePoint]
    models: list[ParameterVector] = field(default_factory=list, repr=False)


def recover(
    w_start: ParameterVector,
    dataset: FederatedDataset,
    hyper: Hyper,
    max_rounds: int,
    stop_target_acc: float | None,
    eval_data: LabeledBatch,
    forget_data: LabeledBatch | None = None,
    clients: Iterable[int] | None = None,
    seed: int = 0,
    round_offset: int = 0,
    keep_models: bool = False,
    n_jobs: int = 1,
) -> RecoveryResult:
    """Standard rounds from ``w_start`` until test accuracy catches up.

    Round 0 is ``w_start`` itself. Stops at the first round whose accuracy
    on ``eval_data`` is ``>= stop_target_acc``; with ``stop_target_acc``
    set to None it always runs ``max_rounds`` rounds. Hitting the cap is
    reported through ``capped``, not raised.
    """
    if max_rounds < 1:
        raise ValueError("max_rounds must be >= 1")
    pool = frozenset(range(dataset.num_clients) if clients is None else clients)

    def _point(r, w):
        fa = predict_accuracy(w, forget_data) if forget_data is not None and len(forget_data) else None
        return CurvePoint(r, predict_accuracy(w, eval_data), fa)

    curve = [_point(0, w_start)]
    models = [w_start] if keep_models else []

    def reached() -> bool:
        return stop_target_acc is not None and curve[-1].test_acc >= stop_target_acc

    state = EngineState(w_start, dataset)
    r = 0
    while not reached() and r < max_rounds:
        r += 1
        state = run_round(state, RoundPlan(round_offset + r, pool, eta_s=hyper.eta_s), hyper, seed, n_jobs)
        curve.append(_point(r, state.w))
        if keep_models:
            models.append(state.w)
    capped = not reached() and stop_target_acc is not None
    return RecoveryResult(state.w, r, capped, curve, models)


def apply_strategy(
    request: UnlearnRequest,
    w_t: ParameterVector,
    views: ScopedViews,
    hyper: Hyper,
    seed: int,
    round_index: int,
    history: TrainHistory | None = None,
    arch: ModelArch | None = None,
    retrained: ParameterVector | None = None,
    n_jobs: int = 1,
) -> ParameterVector:
    """Produce the unlearned model for any strategy except Retrain's training.

    ``retrained`` must be supplied for the Retrain strategy, ``history`` (with
    the last round's stored updates) for PGA.
    """
    targets = sorted(request.targets)
    s = request.strategy
    if s == "natural":
        return w_t
    if s == "retrain":
        if retrained is None:
            raise ValueError("retrain strategy needs the retrained model")
        return retrained
    if s == "not":
        return not_unlearn(w_t, request.not_include_bias)
    if s == "puf_special":
        return puf_special_round(w_t, views.unlearn, targets, request.unlearning_rate, hyper, seed, round_index, n_jobs)
    if s == "puf_regular":
        retained = [c for c in range(views.unlearn.num_clients) if c not in request.targets]
        return puf_regular_round(
            w_t, views.unlearn, retained, targets, request.eta_r, request.unlearning_rate, hyper, seed, round_index, n_jobs
        )
    if s == "pga":
        stored = None
        if history is not None and all(t in history.last_updates for t in targets):
            stored = [history.last_updates[t] for t in targets]
        w_ref = make_pga_reference(w_t, stored, history.last_n if history is not None else 0)
        return pga_unlearn(w_t, views.forget_data, w_ref, request.pga, derive_seed(seed, "pga"))
    raise ValueError(f"unknown strategy {s!r}")
