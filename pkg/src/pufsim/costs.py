"""Closed-form communication, computation and storage costs.

Costs are hardware-agnostic counts: bytes exchanged (uplink + downlink),
training FLOPs and peak persistent storage. Every method is charged an
unlearning phase (method specific) plus a recovery phase of standard FedAvg
rounds among the remaining ``C_r`` clients. Retrain has no recovery phase;
its unlearning phase is the whole from-scratch run.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Mapping

METHODS = ("retrain", "federaser", "pga", "fedau", "mode", "puf_special", "puf_regular", "not", "natural")
AXES = ("comm", "comp", "storage")

DISPLAY_NAMES = {
    "retrain": "Retrain",
    "federaser": "FedEraser",
    "pga": "PGA",
    "fedau": "FedAU",
    "mode": "MoDe",
    "puf_special": "PUF-Special",
    "puf_regular": "PUF-Regular",
    "not": "NoT",
    "natural": "Natural",
}


@dataclass(frozen=True)
class CostInputs:
    P: float
    C: int
    C_u: int
    F: float
    N: float
    B: float = 4.0
    P_c: float = 0.0
    C_r: int | None = None
    E: float = 1.0
    R: int = 200
    R_ret: int = 200
    E_cal: float = 0.5
    E_asc: float = 5.0
    R_d: int = 6
    R_m: int = 10
    R_rec: int = 0

    def __post_init__(self):
        if self.C_r is None:
            object.__setattr__(self, "C_r", self.C - self.C_u)
        for f in fields(self):
            v = getattr(self, f.name)
            if v < 0:
                raise ValueError(f"cost input {f.name} must be non-negative, got {v}")
        if self.C != self.C_u + self.C_r:
            raise ValueError(f"C={self.C} must equal C_u + C_r = {self.C_u} + {self.C_r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PhaseCost:
    comm: float
    comp: float
    storage: float
    negligible: frozenset[str] = frozenset()

    def __add__(self, other: PhaseCost) -> PhaseCost:
        # a sum is negligible on an axis only if both parts are
        both = {a for a in AXES if a in self.negligible and a in other.negligible}
        return PhaseCost(self.comm + other.comm, self.comp + other.comp, self.storage + other.storage, frozenset(both))

    def axis(self, name: str) -> float:
        return getattr(self, name)


def comm_round(P: float, B: float, participants: int) -> float:
    """Bytes moved in one round: each participant downloads and uploads the model."""
    if min(P, B, participants) < 0:
        raise ValueError("inputs must be non-negative")
    return 2 * P * B * participants


def recovery_costs(inputs: CostInputs, R_rec: int | None = None) -> tuple[float, float]:
    r = inputs.R_rec if R_rec is None else R_rec
    return (
        2 * inputs.P * inputs.B * inputs.C_r * r,
        inputs.F * inputs.N * inputs.E * inputs.C_r * r,
    )


def method_costs(method: str, inputs: CostInputs) -> PhaseCost:
    """Unlearning-phase cost of ``method``."""
    i = inputs
    PB = i.P * i.B
    FN = i.F * i.N
    if method == "retrain":
        return PhaseCost(2 * PB * i.C_r * i.R, FN * i.E * i.C_r * i.R, PB)
    if method == "federaser":
        return PhaseCost(2 * PB * i.C_r * i.R_ret, FN * i.E_cal * i.C_r * i.R_ret, i.C * i.R_ret * PB)
    if method == "pga":
        # C stored client updates plus the global model
        return PhaseCost(2 * PB, FN * i.E_asc * i.C_u, (i.C + 1) * PB)
    if method == "fedau":
        return PhaseCost(2 * i.P_c * i.B, 0.0, PB, frozenset({"comp"}))
    if method == "mode":
        rounds = i.C_r * i.R_d + i.C * i.R_m
        return PhaseCost(2 * PB * rounds, FN * i.E * rounds, 2 * PB)
    if method == "puf_special":
        return PhaseCost(2 * PB * i.C_u, FN * i.E * i.C_u, PB)
    if method == "puf_regular":
        return PhaseCost(2 * PB * i.C, FN * i.E * i.C, PB)
    if method == "not":
        return PhaseCost(0.0, 0.0, PB, frozenset({"comm", "comp"}))
    if method == "natural":
        return PhaseCost(0.0, 0.0, PB, frozenset({"comm", "comp"}))
    raise KeyError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")


def improvement_ratios(method_total: PhaseCost, retrain_total: PhaseCost) -> dict[str, float]:
    """``retrain / method`` per axis; a zero-cost method maps to ``inf``."""
    out = {}
    for a in AXES:
        base = retrain_total.axis(a)
        if base <= 0:
            raise ZeroDivisionError(f"retrain {a} cost must be positive")
        value = method_total.axis(a)
        out[a] = math.inf if value == 0 else base / value
    return out


def format_ratio(ratio: float, negligible: bool = False) -> str:
    if negligible or math.isinf(ratio):
        return "—"
    if ratio >= 1:
        return f"{ratio:.1f}×"
    return f"{ratio:.3g}×"


@dataclass(frozen=True)
class MethodCost:
    method: str
    unlearn: PhaseCost
    recovery: PhaseCost
    recovery_rounds: int
    ratios: dict[str, float] = field(default_factory=dict)

    @property
    def total(self) -> PhaseCost:
        return self.unlearn + self.recovery


@dataclass(frozen=True)
class CostReport:
    inputs: CostInputs
    methods: dict[str, MethodCost]

    def to_dict(self) -> dict:
        def phase(p: PhaseCost) -> dict:
            return {"comm_bytes": p.comm, "comp_flops": p.comp, "storage_bytes": p.storage, "negligible": sorted(p.negligible)}

        return {
            "inputs": self.inputs.to_dict(),
            "methods": {
                name: {
                    "recovery_rounds": m.recovery_rounds,
                    "unlearn": phase(m.unlearn),
                    "recovery": phase(m.recovery),
                    "total": phase(m.total),
                    "ratio_vs_retrain": {a: (None if math.isinf(v) else v) for a, v in m.ratios.items()},
                }
                for name, m in self.methods.items()
            },
        }


def cost_report(
    inputs: CostInputs,
    methods: tuple[str, ...] = METHODS,
    recovery_rounds: Mapping[str, int] | None = None,
) -> CostReport:
    """Costs for ``methods``; each uses ``recovery_rounds[method]`` or ``inputs.R_rec``."""
    recovery_rounds = dict(recovery_rounds or {})
    retrain_total = method_costs("retrain", inputs)
    out = {}
    for name in methods:
        r = 0 if name == "retrain" else int(recovery_rounds.get(name, inputs.R_rec))
        comm, comp = recovery_costs(inputs, r)
        recovery = PhaseCost(comm, comp, 0.0)
        unlearn = method_costs(name, inputs)
        ratios = improvement_ratios(unlearn + recovery, retrain_total)
        out[name] = MethodCost(name, unlearn, recovery, r, ratios)
    return CostReport(replace(inputs), out)
