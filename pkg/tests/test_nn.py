import math

import numpy as np
import pytest

from pufsim.nn import (
    LabeledBatch,
    ModelArch,
    ParameterVector,
    ShapeError,
    init_model,
    loss_and_grad,
    max_confidence,
    per_sample_losses,
    predict,
    predict_accuracy,
    sgd_step,
)

from .conftest import random_batch, vec

ARCHS = [ModelArch("logistic", 4, 3), ModelArch("mlp", 4, 3, hidden_dim=5)]


def finite_difference(w, batch, h=1e-5):
    """Central differences of the mean per-sample loss; never touches the analytic gradient."""
    out = np.empty_like(w.values)
    for j in range(w.values.size):
        up, down = w.values.copy(), w.values.copy()
        up[j] += h
        down[j] -= h
        out[j] = (per_sample_losses(w.with_values(up), batch).mean() - per_sample_losses(w.with_values(down), batch).mean()) / (2 * h)
    return out


def max_rel_error(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), 1e-7)))


def test_init_deterministic_and_zero_bias():
    arch = ModelArch("logistic", 2, 2)
    a, b = init_model(arch, 7), init_model(arch, 7)
    assert a == b
    for name, layer in init_model(ModelArch("mlp", 4, 2, hidden_dim=3), 1).layers().items():
        if name.startswith("b"):
            assert np.all(layer == 0)


def test_mlp_parameter_count():
    # 4*3 + 3 + 3*2 + 2
    assert init_model(ModelArch("mlp", 4, 2, hidden_dim=3), 0).values.size == 23


def test_parameter_vector_is_read_only():
    w = init_model(ARCHS[0], 0)
    with pytest.raises(ValueError):
        w.values[0] = 1.0


def test_parameter_vector_rejects_nan_and_bad_length():
    with pytest.raises(FloatingPointError):
        vec([1.0, math.nan])
    with pytest.raises(ShapeError):
        ParameterVector(np.zeros(3), (("W", (2, 2)),))


def test_zero_model_loss_is_ln2():
    w = init_model(ModelArch("logistic", 3, 2), 0).with_values(np.zeros(8))
    batch = random_batch(np.random.default_rng(0), 6, 3, 2)
    loss, _ = loss_and_grad(w, batch)
    assert loss == pytest.approx(math.log(2), abs=1e-15)
    assert np.allclose(per_sample_losses(w, batch), math.log(2), atol=1e-15)


def test_symmetric_batch_zero_bias_gradient():
    arch = ModelArch("logistic", 2, 2)
    w = init_model(arch, 0).with_values(np.zeros(6))
    x = np.array([[1.0, 2.0], [-1.0, -2.0], [1.0, 2.0], [-1.0, -2.0]])
    _, g = loss_and_grad(w, LabeledBatch(x, np.array([0, 0, 1, 1])))
    assert np.allclose(g.layers()["b"], 0.0, atol=1e-15)


@pytest.mark.parametrize("arch", ARCHS, ids=lambda a: a.kind)
def test_gradient_matches_finite_differences(arch):
    rng = np.random.default_rng(42)
    worst = 0.0
    for draw in range(100):
        w = init_model(arch, draw)
        w = w.with_values(w.values + rng.normal(scale=0.5, size=w.values.size))
        batch = random_batch(rng, 8, arch.feature_dim, arch.num_classes)
        _, g = loss_and_grad(w, batch)
        worst = max(worst, max_rel_error(g.values, finite_difference(w, batch)))
    assert worst < 1e-4


def test_loss_is_mean_of_per_sample_losses():
    rng = np.random.default_rng(1)
    w = init_model(ARCHS[1], 3)
    batch = random_batch(rng, 10, 4, 3)
    loss, _ = loss_and_grad(w, batch)
    assert loss == pytest.approx(per_sample_losses(w, batch).mean(), abs=1e-12)


def test_confident_model_loss_near_zero():
    arch = ModelArch("logistic", 2, 2)
    W = np.array([[50.0, -50.0], [-50.0, 50.0]])
    w = init_model(arch, 0).with_values(np.concatenate([W.ravel(), [0.0, 0.0]]))
    batch = LabeledBatch(np.eye(2), np.array([0, 1]))
    assert np.all(per_sample_losses(w, batch) < 1e-12)


def test_sgd_step_hand_arithmetic():
    assert np.array_equal(sgd_step(vec([1, 1]), vec([2, -2]), 0.5).values, [0.0, 2.0])
    assert sgd_step(vec([1, 1]), vec([0, 0]), 0.3) == vec([1, 1])


def test_sgd_steps_are_linear():
    w, g1, g2 = vec([0.5, -1.0]), vec([1.0, 2.0]), vec([-3.0, 0.25])
    two = sgd_step(sgd_step(w, g1, 0.1), g2, 0.1)
    one = sgd_step(w, vec(g1.values + g2.values), 0.1)
    assert np.allclose(two.values, one.values, atol=1e-15)


def test_sgd_rejects_nonpositive_lr():
    with pytest.raises(ValueError):
        sgd_step(vec([1.0]), vec([1.0]), 0.0)


def test_accuracy_tie_break_goes_to_class_zero():
    w = init_model(ModelArch("logistic", 3, 2), 0).with_values(np.zeros(8))
    batch = LabeledBatch(np.random.default_rng(0).normal(size=(10, 3)), np.array([0, 1] * 5))
    assert np.all(predict(w, batch.inputs) == 0)
    assert predict_accuracy(w, batch) == 0.5


def test_accuracy_perfect_and_in_range():
    rng = np.random.default_rng(5)
    w = init_model(ARCHS[0], 5)
    batch = random_batch(rng, 30, 4, 3)
    acc = predict_accuracy(w, batch)
    assert 0.0 <= acc <= 1.0
    relabeled = LabeledBatch(batch.inputs, predict(w, batch.inputs))
    assert predict_accuracy(w, relabeled) == 1.0


def test_max_confidence_uniform_at_zero():
    w = init_model(ARCHS[0], 0).with_values(np.zeros(15))
    assert np.allclose(max_confidence(w, random_batch(np.random.default_rng(0), 4, 4, 3)), 1 / 3)


def test_batch_validation():
    with pytest.raises(ShapeError):
        LabeledBatch(np.zeros((3, 2)), np.zeros(2, dtype=int))
    with pytest.raises(ValueError):
        LabeledBatch(np.zeros((2, 2)), np.array([0, -1]))
    w = init_model(ARCHS[0], 0)
    with pytest.raises(ShapeError):
        loss_and_grad(w, LabeledBatch(np.zeros((2, 5)), np.zeros(2, dtype=int)))
    with pytest.raises(ValueError):
        loss_and_grad(w, LabeledBatch(np.zeros((0, 4)), np.zeros(0, dtype=int)))
