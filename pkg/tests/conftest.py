import numpy as np
import pytest

from pufsim.data import generate_synthetic, partition_iid
from pufsim.nn import LabeledBatch, ModelArch, ParameterVector


def vec(values, arch=None):
    """ParameterVector over a flat toy schema, for hand-arithmetic tests."""
    values = np.asarray(values, dtype=np.float64)
    return ParameterVector(values, (("W", (values.size,)),))


def random_batch(rng, n, d, k):
    return LabeledBatch(rng.normal(size=(n, d)), rng.integers(0, k, size=n))


@pytest.fixture
def small_federation():
    train, test = generate_synthetic(3, 4, 40, 4.0, seed=1)
    return partition_iid(train, 4, seed=1, test=test, num_classes=3), ModelArch("logistic", 4, 3)


TINY = {
    "dataset": {"num_classes": 3, "feature_dim": 4, "samples_per_class": 40, "class_separation": 4.0},
    "partition": {"kind": "iid"},
    "clients": 4,
    "rounds": 3,
    "unlearn": {"strategy": "puf_special", "targets": [1]},
    "recovery": {"max_rounds": 3},
    "seeds": [0, 1],
}


@pytest.fixture
def tiny_config():
    import copy

    return copy.deepcopy(TINY)


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(test_acceptance.RESULTS[n])
