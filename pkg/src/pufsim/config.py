"""Experiment configuration: YAML in, validated dataclasses out.

Unknown keys are rejected and every error names the offending key path,
e.g. ``unlearn.targets[0]``. After parsing, all defaults are written into
the config so an echoed config reproduces the run without hidden values.
"""

from __future__ import annotations

import dataclasses
import re
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal, Union

import yaml

from .unlearn import default_eta_u


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


@dataclass
class DatasetConfig:
    path: str | None = None
    num_classes: int = 5
    feature_dim: int = 10
    samples_per_class: int = 200
    class_separation: float = 6.0
    seed: int | None = None


@dataclass
class PartitionConfig:
    kind: Literal["iid", "lda", "exclusive"] = "iid"
    alpha: float = 0.3
    min_per_client: int = 2
    exclusive_client: int = 0
    exclusive_label: int = 0


@dataclass
class ArchConfig:
    kind: Literal["logistic", "mlp"] = "logistic"
    hidden_dim: int | None = None


@dataclass
class HyperConfig:
    epochs: int = 1
    lr: float = 0.1
    batch_size: int = 32
    lr_decay: float = 0.998
    eta_s: float = 1.0
    # None continues the training schedule into recovery; an int restarts it there
    lr_schedule_offset: int | None = None


@dataclass
class PgaConfig:
    ascent_epochs: int = 5
    clip_threshold: float = 5.0
    ball_radius: float | Literal["auto"] = "auto"
    early_stop_loss_threshold: float | Literal["auto"] | None = "auto"
    batch_size: int = 512
    lr: float | None = None


@dataclass
class UnlearnConfig:
    strategy: Literal["puf_regular", "puf_special", "not", "pga", "natural", "retrain"] = "puf_special"
    targets: list[int] = field(default_factory=lambda: [0])
    scope: Literal["client", "sample"] = "client"
    fraction: float = 0.5
    eta_r: float = 1.0
    eta_u: float | None = None
    not_include_bias: bool = False
    pga: PgaConfig = field(default_factory=PgaConfig)


@dataclass
class RecoveryConfig:
    max_rounds: int = 50
    # False runs exactly max_rounds rounds (fixed recovery budget)
    stop_at_retrain_acc: bool = True


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    clients: int = 10
    rounds: int = 30
    participation: Union[Literal["all"], int] = "all"
    hyper: HyperConfig = field(default_factory=HyperConfig)
    unlearn: UnlearnConfig = field(default_factory=UnlearnConfig)
    recovery: RecoveryConfig = field(default_factory=RecoveryConfig)
    seeds: list[int] = field(default_factory=lambda: [0])
    cost_inputs: dict[str, float] = field(default_factory=dict)
    output_dir: str = "out"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


class _Loader(yaml.SafeLoader):
    pass


# PyYAML follows YAML 1.1, where ``1.5e9`` (no sign, no dot) is a string.
# Resolve floats the YAML 1.2 way so scientific notation reads naturally.
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(
        r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
        |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
        |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
        |[-+]?\.(?:inf|Inf|INF)
        |\.(?:nan|NaN|NAN))$""",
        re.X,
    ),
    list("-+0123456789."),
)

COST_KEYS = {"P", "B", "P_c", "C", "C_u", "C_r", "F", "N", "E", "R", "R_ret", "E_cal", "E_asc", "R_d", "R_m", "R_rec"}


def _coerce(value: Any, tp: Any, key: str) -> Any:
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, key)
    if origin in (Union, types.UnionType):
        errors = []
        for option in typing.get_args(tp):
            try:
                return _coerce(value, option, key)
            except ConfigError as e:
                errors.append(str(e).split(": ", 1)[-1])
        raise ConfigError(key, " / ".join(errors))
    if tp is type(None):
        if value is not None:
            raise ConfigError(key, f"expected null, got {value!r}")
        return None
    if origin is Literal:
        if value not in typing.get_args(tp):
            raise ConfigError(key, f"expected one of {list(typing.get_args(tp))}, got {value!r}")
        return value
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(key, f"expected a list, got {value!r}")
        (item,) = typing.get_args(tp)
        return [_coerce(v, item, f"{key}[{i}]") for i, v in enumerate(value)]
    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(key, f"expected a mapping, got {value!r}")
        return {str(k): _coerce(v, float, f"{key}.{k}") for k, v in value.items()}
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}")
        return value
    raise TypeError(f"unsupported config type {tp!r}")


def _build(cls, data: Any, prefix: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(prefix, f"expected a mapping, got {data!r}")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    for k in data:
        if k not in known:
            raise ConfigError(f"{prefix}.{k}" if prefix else str(k), "unknown key")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in data:
            key = f"{prefix}.{f.name}" if prefix else f.name
            kwargs[f.name] = _coerce(data[f.name], hints[f.name], key)
    return cls(**kwargs)


def _positive(value, key, allow_zero=False):
    if value < 0 or (value == 0 and not allow_zero):
        raise ConfigError(key, f"must be {'non-negative' if allow_zero else 'positive'}, got {value}")


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    """Check cross-field invariants and fill strategy-dependent defaults."""
    _positive(cfg.clients, "clients")
    _positive(cfg.rounds, "rounds")
    if not cfg.seeds:
        raise ConfigError("seeds", "at least one seed is required")
    for i, s in enumerate(cfg.seeds):
        _positive(s, f"seeds[{i}]", allow_zero=True)
    if len(set(cfg.seeds)) != len(cfg.seeds):
        raise ConfigError("seeds", "seeds must be distinct")
    if cfg.participation != "all" and not 1 <= cfg.participation <= cfg.clients:
        raise ConfigError("participation", f"must be 'all' or in [1, {cfg.clients}]")

    d = cfg.dataset
    if d.path is None:
        for name in ("num_classes", "feature_dim", "samples_per_class"):
            _positive(getattr(d, name), f"dataset.{name}")
        _positive(d.class_separation, "dataset.class_separation", allow_zero=True)

    p = cfg.partition
    _positive(p.alpha, "partition.alpha")
    _positive(p.min_per_client, "partition.min_per_client")
    if p.kind == "exclusive":
        if not 0 <= p.exclusive_client < cfg.clients:
            raise ConfigError("partition.exclusive_client", f"must be a client id below {cfg.clients}")
        if d.path is None and not 0 <= p.exclusive_label < d.num_classes:
            raise ConfigError("partition.exclusive_label", f"must be a label below {d.num_classes}")

    if cfg.arch.kind == "mlp":
        if cfg.arch.hidden_dim is None:
            raise ConfigError("arch.hidden_dim", "required for mlp")
        _positive(cfg.arch.hidden_dim, "arch.hidden_dim")

    h = cfg.hyper
    _positive(h.epochs, "hyper.epochs")
    _positive(h.batch_size, "hyper.batch_size")
    _positive(h.lr, "hyper.lr", allow_zero=True)
    _positive(h.lr_decay, "hyper.lr_decay")
    if h.lr_schedule_offset is not None:
        _positive(h.lr_schedule_offset, "hyper.lr_schedule_offset", allow_zero=True)

    u = cfg.unlearn
    if not u.targets:
        raise ConfigError("unlearn.targets", "at least one target is required")
    for i, t in enumerate(u.targets):
        if not 0 <= t < cfg.clients:
            raise ConfigError(f"unlearn.targets[{i}]", f"client {t} does not exist (clients={cfg.clients})")
    if len(set(u.targets)) != len(u.targets):
        raise ConfigError("unlearn.targets", "targets must be distinct")
    if len(u.targets) >= cfg.clients:
        raise ConfigError("unlearn.targets", "at least one client must remain")
    if u.scope == "sample" and not 0 < u.fraction < 1:
        raise ConfigError("unlearn.fraction", "must lie in (0, 1)")
    if u.eta_u is None:
        u.eta_u = default_eta_u(u.strategy)
    _positive(u.eta_u, "unlearn.eta_u", allow_zero=True)
    _positive(u.eta_r, "unlearn.eta_r", allow_zero=True)
    g = u.pga
    _positive(g.ascent_epochs, "unlearn.pga.ascent_epochs")
    _positive(g.clip_threshold, "unlearn.pga.clip_threshold")
    _positive(g.batch_size, "unlearn.pga.batch_size")
    if g.ball_radius != "auto":
        _positive(g.ball_radius, "unlearn.pga.ball_radius", allow_zero=True)
    if g.early_stop_loss_threshold not in (None, "auto"):
        _positive(g.early_stop_loss_threshold, "unlearn.pga.early_stop_loss_threshold")
    if g.lr is not None:
        _positive(g.lr, "unlearn.pga.lr")

    _positive(cfg.recovery.max_rounds, "recovery.max_rounds")

    for k, v in cfg.cost_inputs.items():
        if k not in COST_KEYS:
            raise ConfigError(f"cost_inputs.{k}", "unknown key")
        _positive(v, f"cost_inputs.{k}", allow_zero=True)
    return cfg


def parse_config(source: str | Path | dict) -> ExperimentConfig:
    """Parse a YAML file path, YAML text or an already-loaded mapping."""
    if isinstance(source, dict):
        data = source
    else:
        text = source
        if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and Path(source).is_file()):
            text = Path(source).read_text()
        elif isinstance(source, str) and "\n" not in source and source.endswith((".yaml", ".yml")):
            raise FileNotFoundError(source)
        try:
            data = yaml.load(text, Loader=_Loader)
        except yaml.YAMLError as e:
            raise ConfigError("", f"invalid YAML: {e}") from e
    return validate(_build(ExperimentConfig, data or {}, ""))
