"""End-to-end protocol: train, unlearn, recover, evaluate, report.

For every seed the runner

1. builds and partitions the dataset,
2. trains the original model on all clients,
3. trains the retrained reference without the forgotten data,
4. applies the configured unlearning strategy to the original model,
5. runs recovery rounds until test accuracy first reaches the retrained
   model's (or for a fixed budget), and
6. scores every stage with test/forget accuracy and both MIAs.

Each seed is independent; a failing seed is recorded and the rest go on.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from ._rng import derive_seed
from .config import ExperimentConfig, parse_config
from .costs import CostInputs, cost_report
from .data import FederatedDataset, generate_synthetic, load_dataset, partition_exclusive_class, partition_iid, partition_lda
from .engine import Hyper, mean_loss, train
from .metrics import METRIC_KEYS, EfficacyReport, aggregate_reports, delta_report, forget_accuracy, mia_song, mia_yeom
from .nn import LabeledBatch, ModelArch, ParameterVector, predict_accuracy
from .unlearn import (
    PgaParams,
    ScopedViews,
    UnlearnRequest,
    apply_strategy,
    make_pga_reference,
    pga_default_radius,
    pga_default_threshold,
    recover,
    sample_scope_filter,
)

log = logging.getLogger(__name__)

ROUNDS_HEADER = ["seed", "phase", "round", "test_acc", "forget_acc", "mia_song", "mia_yeom"]
COSTS_HEADER = ["method", "phase", "comm_bytes", "comp_flops", "storage_bytes", "ratio_vs_retrain"]


@dataclass
class SeedRun:
    seed: int
    status: str
    error: str | None = None
    metrics: dict[str, dict[str, float]] = field(default_factory=dict)
    deltas: dict[str, float] = field(default_factory=dict)
    recovery_rounds: int | None = None
    capped: bool | None = None
    retrain_test_acc: float | None = None
    yeom_threshold: dict[str, float] = field(default_factory=dict)
    curve: list[dict] = field(default_factory=list)
    costs: dict | None = None


@dataclass
class ExperimentReport:
    config: dict
    version: str
    seeds: list[int]
    runs: list[SeedRun]
    summary: dict
    costs: dict | None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentReport:
        data = dict(data)
        data["runs"] = [SeedRun(**r) for r in data["runs"]]
        return cls(**data)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"


def build_dataset(cfg: ExperimentConfig, seed: int) -> FederatedDataset:
    d, p = cfg.dataset, cfg.partition
    if d.path is not None:
        fd = load_dataset(d.path)
        if fd.num_clients != cfg.clients:
            raise ValueError(f"dataset file holds {fd.num_clients} clients, config says {cfg.clients}")
        return fd
    data_seed = seed if d.seed is None else d.seed
    train_set, test_set = generate_synthetic(d.num_classes, d.feature_dim, d.samples_per_class, d.class_separation, data_seed)
    if p.kind == "iid":
        return partition_iid(train_set, cfg.clients, data_seed, test_set, d.num_classes)
    if p.kind == "lda":
        return partition_lda(train_set, cfg.clients, p.alpha, p.min_per_client, data_seed, test_set, d.num_classes)
    return partition_exclusive_class(
        train_set, cfg.clients, p.exclusive_client, p.exclusive_label, data_seed, test_set, d.num_classes
    )


def make_arch(cfg: ExperimentConfig, fd: FederatedDataset) -> ModelArch:
    dim = fd.clients[0].feature_dim
    return ModelArch(cfg.arch.kind, dim, fd.num_classes, cfg.arch.hidden_dim)


def make_hyper(cfg: ExperimentConfig) -> Hyper:
    h = cfg.hyper
    return Hyper(h.epochs, h.lr, h.batch_size, h.lr_decay, h.eta_s)


def make_request(cfg: ExperimentConfig, arch: ModelArch, seed: int) -> UnlearnRequest:
    u, g = cfg.unlearn, cfg.unlearn.pga
    threshold = g.early_stop_loss_threshold
    if threshold == "auto":
        threshold = pga_default_threshold(arch.num_classes, iid=cfg.partition.kind == "iid")
    pga = PgaParams(
        ascent_epochs=g.ascent_epochs,
        clip_threshold=g.clip_threshold,
        ball_radius=0.0 if g.ball_radius == "auto" else g.ball_radius,
        early_stop_loss_threshold=threshold,
        batch_size=g.batch_size,
        lr=cfg.hyper.lr if g.lr is None else g.lr,
    )
    return UnlearnRequest(
        frozenset(u.targets), u.strategy, u.scope, u.fraction, seed, u.eta_r, u.eta_u, pga, u.not_include_bias
    )


def model_flops_per_sample(arch: ModelArch) -> float:
    """Training FLOPs per sample for a dense net: 2 forward + 4 backward per weight."""
    params = sum(int(np.prod(s)) for _, s in arch.schema)
    return 6.0 * params


def derived_cost_inputs(cfg: ExperimentConfig, arch: ModelArch, mean_client_size: float, recovery_rounds: int = 0) -> CostInputs:
    """Cost symbols measured from the desk-scale run; ``cost_inputs`` overrides win."""
    params = sum(int(np.prod(s)) for _, s in arch.schema)
    head = (arch.hidden_dim or arch.feature_dim) * arch.num_classes + arch.num_classes
    values = {
        "P": float(params),
        "B": 4.0,
        "P_c": float(head),
        "C": cfg.clients,
        "C_u": len(cfg.unlearn.targets),
        "F": model_flops_per_sample(arch),
        "N": float(mean_client_size),
        "E": float(cfg.hyper.epochs),
        "R": cfg.rounds,
        "E_asc": float(cfg.unlearn.pga.ascent_epochs),
        "R_rec": recovery_rounds,
    }
    for k, v in cfg.cost_inputs.items():
        values[k] = v
    ints = {"C", "C_u", "C_r", "R", "R_ret", "R_d", "R_m", "R_rec"}
    values = {k: (int(round(v)) if k in ints else v) for k, v in values.items()}
    return CostInputs(**values)


def _evaluate(
    w: ParameterVector,
    test: LabeledBatch,
    forget: LabeledBatch,
    retain: LabeledBatch,
    train_batches: list[LabeledBatch],
    seed: int,
) -> tuple[dict[str, float], float]:
    threshold = mean_loss(w, train_batches)
    song = mia_song(w, retain, test, forget, derive_seed(seed, "song"))
    return {
        "test_acc": predict_accuracy(w, test),
        "forget_acc": forget_accuracy(w, forget),
        "mia_song": song.rate,
        "mia_yeom": mia_yeom(w, threshold, forget),
    }, threshold


def run_seed(cfg: ExperimentConfig, seed: int, n_jobs: int = 1) -> SeedRun:
    fd = build_dataset(cfg, seed)
    arch = make_arch(cfg, fd)
    hyper = make_hyper(cfg)
    request = make_request(cfg, arch, seed)
    views: ScopedViews = sample_scope_filter(request, fd)

    original, history = train(fd, arch, cfg.rounds, hyper, cfg.participation, seed, n_jobs=n_jobs)
    retrained, _ = train(
        views.recovery, arch, cfg.rounds, hyper, cfg.participation, seed, clients=views.recovery_clients, n_jobs=n_jobs
    )

    if request.strategy == "pga" and cfg.unlearn.pga.ball_radius == "auto":
        stored = [history.last_updates[t] for t in sorted(request.targets) if t in history.last_updates]
        w_ref = make_pga_reference(original, stored or None, history.last_n)
        radius = pga_default_radius(w_ref, arch, seed)
        request = replace(request, pga=replace(request.pga, ball_radius=radius))

    unlearned = apply_strategy(
        request, original, views, hyper, seed, cfg.rounds, history, arch, retrained, n_jobs
    )

    test = fd.test
    retain = LabeledBatch.concat([views.recovery.clients[c] for c in views.recovery_clients])
    remaining = [views.recovery.clients[c] for c in views.recovery_clients]
    everyone = list(fd.clients)

    m_orig, thr_orig = _evaluate(original, test, views.forget_data, retain, everyone, seed)
    m_retrain, thr_retrain = _evaluate(retrained, test, views.forget_data, retain, remaining, seed)

    offset = cfg.rounds if cfg.hyper.lr_schedule_offset is None else cfg.hyper.lr_schedule_offset
    stop = m_retrain["test_acc"] if cfg.recovery.stop_at_retrain_acc else None
    rec = recover(
        unlearned,
        views.recovery,
        hyper,
        cfg.recovery.max_rounds,
        stop,
        test,
        views.forget_data,
        clients=views.recovery_clients,
        seed=derive_seed(seed, "recovery"),
        round_offset=offset,
        keep_models=True,
        n_jobs=n_jobs,
    )

    curve = []
    for point, w in zip(rec.curve, rec.models):
        m, _ = _evaluate(w, test, views.forget_data, retain, remaining, seed)
        curve.append({"round": point.round, **m})
    m_unlearned = {k: curve[0][k] for k in METRIC_KEYS}
    m_recovered = {k: curve[-1][k] for k in METRIC_KEYS}
    report = delta_report(m_recovered, m_retrain)

    costs = cost_report(
        derived_cost_inputs(cfg, arch, float(np.mean(fd.sizes)), rec.rounds),
        methods=("retrain",) if request.strategy == "retrain" else ("retrain", request.strategy),
        recovery_rounds={request.strategy: rec.rounds},
    )
    return SeedRun(
        seed=seed,
        status="ok",
        metrics={"original": m_orig, "retrain": m_retrain, "unlearned": m_unlearned, "recovered": m_recovered},
        deltas=report.deltas,
        recovery_rounds=rec.rounds,
        capped=rec.capped,
        retrain_test_acc=m_retrain["test_acc"],
        yeom_threshold={"original": thr_orig, "retrain": thr_retrain},
        curve=curve,
        costs=costs.to_dict(),
    )


def run_experiment(cfg: ExperimentConfig, n_jobs: int = 1) -> ExperimentReport:
    runs = []
    for seed in cfg.seeds:
        try:
            runs.append(run_seed(cfg, seed, n_jobs))
        except Exception as e:  # one seed failing must not sink the others
            log.exception("seed %d failed", seed)
            runs.append(SeedRun(seed=seed, status="error", error=f"{type(e).__name__}: {e}"))

    ok = [r for r in runs if r.status == "ok"]
    summary: dict = {"seeds_ok": len(ok), "seeds_failed": len(runs) - len(ok)}
    costs = None
    if ok:
        reports = [EfficacyReport(r.metrics["recovered"], r.metrics["retrain"], r.deltas) for r in ok]
        summary.update(aggregate_reports(reports))
        summary["recovery_rounds"] = {
            "mean": float(np.mean([r.recovery_rounds for r in ok])),
            "std": float(np.std([r.recovery_rounds for r in ok])),
        }
        fd = build_dataset(cfg, ok[0].seed)
        arch = make_arch(cfg, fd)
        r_rec = int(math.ceil(summary["recovery_rounds"]["mean"]))
        strategy = cfg.unlearn.strategy
        costs = cost_report(
            derived_cost_inputs(cfg, arch, float(np.mean(fd.sizes)), r_rec),
            methods=("retrain",) if strategy == "retrain" else ("retrain", strategy),
            recovery_rounds={strategy: r_rec},
        ).to_dict()
    return ExperimentReport(cfg.to_dict(), __version__, list(cfg.seeds), runs, summary, costs)


def _csv_text(header: list[str], rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def rounds_rows(report: ExperimentReport) -> list[dict]:
    rows = []
    for run in report.runs:
        if run.status != "ok":
            continue
        for phase in ("original", "retrain"):
            rows.append({"seed": run.seed, "phase": phase, "round": "", **{k: repr(run.metrics[phase][k]) for k in METRIC_KEYS}})
        for point in run.curve:
            rows.append({"seed": run.seed, "phase": "recovery", "round": point["round"], **{k: repr(point[k]) for k in METRIC_KEYS}})
    return rows


def costs_rows(costs: dict | None) -> list[dict]:
    if not costs:
        return []
    rows = []
    for name, m in costs["methods"].items():
        for phase in ("unlearn", "recovery", "total"):
            p = m[phase]
            ratio = ""
            if phase == "total":
                ratio = ";".join("inf" if v is None else repr(v) for v in m["ratio_vs_retrain"].values())
            rows.append(
                {
                    "method": name,
                    "phase": phase,
                    "comm_bytes": repr(p["comm_bytes"]),
                    "comp_flops": repr(p["comp_flops"]),
                    "storage_bytes": repr(p["storage_bytes"]),
                    "ratio_vs_retrain": ratio,
                }
            )
    return rows


def emit_reports(report: ExperimentReport, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        files = {
            "summary.json": report.dumps(),
            "rounds.csv": _csv_text(ROUNDS_HEADER, rounds_rows(report)),
            "costs.csv": _csv_text(COSTS_HEADER, costs_rows(report.costs)),
        }
        paths = []
        for name, text in files.items():
            path = out / name
            path.write_text(text)
            paths.append(path)
    except OSError as e:
        raise OSError(f"cannot write reports to {out}: {e}") from e
    return paths


def load_report(path: str | Path) -> ExperimentReport:
    return ExperimentReport.from_dict(json.loads(Path(path).read_text()))


def run_from_file(path: str | Path, out_dir: str | Path | None = None, n_jobs: int = 1) -> ExperimentReport:
    cfg = parse_config(Path(path))
    report = run_experiment(cfg, n_jobs)
    emit_reports(report, out_dir or cfg.output_dir)
    return report
