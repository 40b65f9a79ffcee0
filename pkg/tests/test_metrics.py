import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pufsim.metrics import (
    METRIC_KEYS,
    EfficacyReport,
    aggregate_reports,
    delta_report,
    fit_confidence_threshold,
    forget_accuracy,
    mia_song,
    mia_yeom,
    song_attack,
    summarize,
    yeom_rate,
)
from pufsim.nn import LabeledBatch, ModelArch, init_model

rates = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)
confidences = st.lists(st.floats(min_value=0.0, max_value=1.0, allow_nan=False), min_size=1, max_size=30)


def zero_model(d=3, k=2):
    return init_model(ModelArch("logistic", d, k), 0).with_values(np.zeros(d * k + k))


def batch(n, d=3, labels=None, seed=0):
    labels = np.array([0, 1] * (n // 2)) if labels is None else labels
    return LabeledBatch(np.random.default_rng(seed).normal(size=(n, d)), labels)


def test_forget_accuracy_tie_break():
    assert forget_accuracy(zero_model(), batch(10)) == 0.5


def test_forget_accuracy_rejects_empty():
    with pytest.raises(ValueError):
        forget_accuracy(zero_model(), LabeledBatch(np.zeros((0, 3)), np.zeros(0, dtype=int)))


def test_yeom_hand_count():
    assert yeom_rate(np.array([0.2, 0.7, 0.4]), 0.5) == pytest.approx(2 / 3)
    assert yeom_rate(np.array([0.6, 0.7]), 0.5) == 0.0
    assert yeom_rate(np.array([0.1, 0.2]), 0.5) == 1.0


def test_yeom_is_strict():
    assert yeom_rate(np.array([0.5]), 0.5) == 0.0


def test_mia_yeom_on_model():
    # every loss is ln 2 at w=0, so thresholds on either side flip the rate
    w, data = zero_model(), batch(6)
    assert mia_yeom(w, math.log(2) + 1e-9, data) == 1.0
    assert mia_yeom(w, math.log(2) - 1e-9, data) == 0.0


def test_song_hand_example():
    res = song_attack(np.array([0.9, 0.8]), np.array([0.3, 0.2]), np.array([0.85, 0.25]))
    assert 0.3 < res.threshold < 0.8
    assert res.rate == 0.5
    assert res.attack_accuracy == 1.0 and not res.degenerate


def test_song_separable_case():
    res = song_attack(np.array([0.9, 0.95]), np.array([0.1, 0.2]), np.array([0.99, 0.97]))
    assert res.rate == 1.0


def test_song_degenerate_at_zero_model():
    w = zero_model()
    res = mia_song(w, batch(8, seed=1), batch(8, seed=2), batch(4, seed=3), seed=0)
    assert res.degenerate and res.rate == 0.5


def test_threshold_ties_go_low():
    # candidates 0.25 and 0.75 score equally
    t, acc = fit_confidence_threshold(np.array([0.5, 1.0]), np.array([0.0, 0.5]))
    assert t == 0.25 and acc == 0.75


def test_mia_song_subsamples_deterministically():
    w = init_model(ModelArch("logistic", 3, 2), 4)
    a = mia_song(w, batch(20, seed=1), batch(6, seed=2), batch(4, seed=3), seed=7)
    b = mia_song(w, batch(20, seed=1), batch(6, seed=2), batch(4, seed=3), seed=7)
    assert a == b


@given(confidences, confidences, confidences)
def test_song_rate_is_a_rate(seen, unseen, forget):
    res = song_attack(np.array(seen), np.array(unseen), np.array(forget))
    assert 0.0 <= res.rate <= 1.0
    assert 0.5 <= res.attack_accuracy <= 1.0


@given(st.lists(st.floats(min_value=0, max_value=50, allow_nan=False), min_size=1, max_size=30), st.floats(0, 50))
def test_yeom_rate_is_a_rate(losses, thr):
    assert 0.0 <= yeom_rate(np.array(losses), thr) <= 1.0


def test_delta_hand_and_identity():
    m = dict.fromkeys(METRIC_KEYS, 0.3)
    assert all(v == 0 for v in delta_report(m, m).deltas.values())
    r = delta_report({"test_acc": 0.60}, {"test_acc": 0.58})
    assert r.deltas["test_acc"] == pytest.approx(0.02)


@given(rates, rates)
def test_delta_symmetric(a, b):
    assert delta_report({"x": a}, {"x": b}).deltas == delta_report({"x": b}, {"x": a}).deltas


def test_delta_key_mismatch():
    with pytest.raises(KeyError):
        delta_report({"a": 0.1}, {"b": 0.1})


def test_report_rejects_non_rates():
    with pytest.raises(ValueError):
        EfficacyReport({"test_acc": 1.5}, {"test_acc": 1.0}, {"test_acc": 0.5})


def test_summarize_and_aggregate():
    assert summarize([1.0, 3.0]) == {"mean": 2.0, "std": 1.0}
    reps = [delta_report({"x": 0.2}, {"x": 0.1}), delta_report({"x": 0.4}, {"x": 0.1})]
    agg = aggregate_reports(reps)
    assert agg["metrics"]["x"]["mean"] == pytest.approx(0.3)
    assert agg["deltas"]["x"]["mean"] == pytest.approx(0.2)
