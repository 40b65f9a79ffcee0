"""Forgetting metrics: accuracies, two membership-inference attacks, deltas."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ._rng import stream
from .nn import LabeledBatch, ParameterVector, max_confidence, per_sample_losses, predict_accuracy

METRIC_KEYS = ("test_acc", "forget_acc", "mia_song", "mia_yeom")


def forget_accuracy(w: ParameterVector, forget_data: LabeledBatch) -> float:
    if len(forget_data) == 0:
        raise ValueError("forget data is empty")
    return predict_accuracy(w, forget_data)


def yeom_rate(forget_losses: np.ndarray, threshold: float) -> float:
    losses = np.asarray(forget_losses, dtype=np.float64)
    if losses.size == 0:
        raise ValueError("forget data is empty")
    return float(np.mean(losses < threshold))


def mia_yeom(w: ParameterVector, global_mean_train_loss: float, forget_data: LabeledBatch) -> float:
    """Share of forget samples whose loss is below the mean training loss."""
    if len(forget_data) == 0:
        raise ValueError("forget data is empty")
    return yeom_rate(per_sample_losses(w, forget_data), global_mean_train_loss)


@dataclass(frozen=True)
class SongResult:
    rate: float
    threshold: float
    attack_accuracy: float
    degenerate: bool = False


def fit_confidence_threshold(seen: np.ndarray, unseen: np.ndarray) -> tuple[float, float] | None:
    """Best single threshold for "confidence > t means seen".

    Candidates are midpoints between consecutive distinct confidences. The
    score is balanced accuracy; ties go to the lowest threshold. Returns
    None when every confidence is identical.
    """
    seen = np.asarray(seen, dtype=np.float64)
    unseen = np.asarray(unseen, dtype=np.float64)
    values = np.unique(np.concatenate([seen, unseen]))
    if values.size < 2:
        return None
    candidates = (values[:-1] + values[1:]) / 2.0
    seen_sorted, unseen_sorted = np.sort(seen), np.sort(unseen)
    tpr = 1.0 - np.searchsorted(seen_sorted, candidates, side="right") / seen.size
    tnr = np.searchsorted(unseen_sorted, candidates, side="right") / unseen.size
    score = (tpr + tnr) / 2.0
    best = int(np.argmax(score))
    return float(candidates[best]), float(score[best])


def song_attack(seen: np.ndarray, unseen: np.ndarray, forget: np.ndarray) -> SongResult:
    """Confidence-threshold attack on already extracted confidences.

    An attack that cannot beat chance on the calibration sets (identical
    confidences, or members less confident than non-members) is reported
    as degenerate with rate 0.5.
    """
    fit = fit_confidence_threshold(seen, unseen)
    if fit is None or fit[1] <= 0.5:
        threshold = math.nan if fit is None else fit[0]
        return SongResult(0.5, threshold, 0.5, degenerate=True)
    threshold, acc = fit
    return SongResult(float(np.mean(np.asarray(forget) > threshold)), threshold, acc)


def mia_song(
    w: ParameterVector,
    retain_data: LabeledBatch,
    test_data: LabeledBatch,
    forget_data: LabeledBatch,
    seed: int,
) -> SongResult:
    """Confidence-based attack calibrated on retain (seen) vs test (unseen).

    The larger of the two sets is subsampled without replacement so both
    sides have equal size. The reported rate is the share of forget
    samples the fitted threshold labels as seen.
    """
    if len(retain_data) == 0 or len(test_data) == 0:
        raise ValueError("retain and test data must be nonempty")
    if len(forget_data) == 0:
        raise ValueError("forget data is empty")
    seen, unseen = max_confidence(w, retain_data), max_confidence(w, test_data)
    m = min(seen.size, unseen.size)
    rng = stream(seed, "attack_subsample")
    if seen.size > m:
        seen = seen[np.sort(rng.choice(seen.size, m, replace=False))]
    if unseen.size > m:
        unseen = unseen[np.sort(rng.choice(unseen.size, m, replace=False))]
    return song_attack(seen, unseen, max_confidence(w, forget_data))


@dataclass(frozen=True)
class EfficacyReport:
    metrics: dict[str, float]
    retrain: dict[str, float]
    deltas: dict[str, float]

    def __post_init__(self):
        for k, v in self.metrics.items():
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{k}={v} is not a rate")


def delta_report(unlearned: Mapping[str, float], retrained: Mapping[str, float]) -> EfficacyReport:
    if set(unlearned) != set(retrained):
        raise KeyError(f"metric keys differ: {sorted(set(unlearned) ^ set(retrained))}")
    deltas = {k: abs(unlearned[k] - retrained[k]) for k in unlearned}
    return EfficacyReport(dict(unlearned), dict(retrained), deltas)


def summarize(values: Sequence[float]) -> dict[str, float]:
    """Mean and population standard deviation across seeds."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("nothing to summarize")
    return {"mean": float(arr.mean()), "std": float(arr.std())}


def aggregate_reports(reports: Sequence[EfficacyReport]) -> dict[str, dict[str, dict[str, float]]]:
    """Per-metric mean/std of values and deltas across seeds."""
    if not reports:
        raise ValueError("no reports")
    keys = list(reports[0].metrics)
    return {
        "metrics": {k: summarize([r.metrics[k] for r in reports]) for k in keys},
        "deltas": {k: summarize([r.deltas[k] for r in reports]) for k in keys},
    }
