"""Small dense classifiers with hand-written gradients.

Two architectures are supported:

* ``logistic``: multinomial logistic regression, layers ``W`` (d, k) and ``b`` (k,)
* ``mlp``: one tanh hidden layer, layers ``W1`` (d, h), ``b1`` (h,), ``W2`` (h, k), ``b2`` (k,)

Parameters live in a flat float64 vector (:class:`ParameterVector`) together
with a schema describing how the vector splits into layers. All functions
here are pure and never mutate their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from ._rng import stream

Schema = tuple[tuple[str, tuple[int, ...]], ...]


class ShapeError(ValueError):
    """Raised when parameters, schemas or batches do not line up."""


@dataclass(frozen=True)
class ModelArch:
    kind: Literal["logistic", "mlp"]
    feature_dim: int
    num_classes: int
    hidden_dim: int | None = None

    def __post_init__(self):
        if self.kind not in ("logistic", "mlp"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.feature_dim < 1 or self.num_classes < 1:
            raise ValueError("feature_dim and num_classes must be >= 1")
        if self.kind == "mlp" and (self.hidden_dim is None or self.hidden_dim < 1):
            raise ValueError("mlp requires hidden_dim >= 1")

    @property
    def schema(self) -> Schema:
        d, k = self.feature_dim, self.num_classes
        if self.kind == "logistic":
            return (("W", (d, k)), ("b", (k,)))
        h = self.hidden_dim
        return (("W1", (d, h)), ("b1", (h,)), ("W2", (h, k)), ("b2", (k,)))


@dataclass(frozen=True, eq=False)
class ParameterVector:
    values: np.ndarray
    schema: Schema

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True).reshape(-1)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "schema", tuple((str(n), tuple(int(s) for s in shp)) for n, shp in self.schema))
        expected = sum(int(np.prod(shp)) for _, shp in self.schema)
        if values.size != expected:
            raise ShapeError(f"vector has {values.size} entries, schema needs {expected}")
        if not np.all(np.isfinite(values)):
            raise FloatingPointError("parameter vector contains non-finite entries")

    def __len__(self) -> int:
        return self.values.size

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ParameterVector):
            return NotImplemented
        return self.schema == other.schema and np.array_equal(self.values, other.values)

    def layers(self) -> dict[str, np.ndarray]:
        """Read-only views of each layer, reshaped."""
        out, start = {}, 0
        for name, shp in self.schema:
            size = int(np.prod(shp))
            out[name] = self.values[start:start + size].reshape(shp)
            start += size
        return out

    def layer_slice(self, name: str) -> slice:
        start = 0
        for n, shp in self.schema:
            size = int(np.prod(shp))
            if n == name:
                return slice(start, start + size)
            start += size
        raise KeyError(name)

    def with_values(self, values: np.ndarray) -> ParameterVector:
        return ParameterVector(values, self.schema)

    def check_compatible(self, other: ParameterVector) -> None:
        if self.schema != other.schema:
            raise ShapeError(f"schema mismatch: {self.schema} vs {other.schema}")


def is_bias(layer_name: str) -> bool:
    return layer_name.startswith("b")


@dataclass(frozen=True, eq=False)
class LabeledBatch:
    inputs: np.ndarray
    labels: np.ndarray
    # positions in the dataset this batch was cut from; used for disjointness checks
    indices: np.ndarray | None = field(default=None)

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.labels)
        if x.ndim != 2:
            raise ShapeError(f"inputs must be 2-D, got shape {x.shape}")
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise ShapeError(f"labels shape {y.shape} does not match {x.shape[0]} input rows")
        if y.size and not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.mod(y, 1) == 0):
                raise ShapeError("labels must be integers")
        y = y.astype(np.int64)
        if y.size and y.min() < 0:
            raise ShapeError("labels must be non-negative")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)
        if self.indices is not None:
            idx = np.asarray(self.indices, dtype=np.int64)
            if idx.shape != y.shape:
                raise ShapeError("indices must have one entry per sample")
            object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return self.labels.shape[0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LabeledBatch):
            return NotImplemented
        same_idx = (self.indices is None and other.indices is None) or (
            self.indices is not None and other.indices is not None and np.array_equal(self.indices, other.indices)
        )
        return same_idx and np.array_equal(self.inputs, other.inputs) and np.array_equal(self.labels, other.labels)

    @property
    def feature_dim(self) -> int:
        return self.inputs.shape[1]

    def take(self, rows: np.ndarray) -> LabeledBatch:
        rows = np.asarray(rows, dtype=np.int64)
        idx = None if self.indices is None else self.indices[rows]
        return LabeledBatch(self.inputs[rows], self.labels[rows], idx)

    @staticmethod
    def concat(batches: list[LabeledBatch]) -> LabeledBatch:
        if not batches:
            raise ValueError("nothing to concatenate")
        idx = None
        if all(b.indices is not None for b in batches):
            idx = np.concatenate([b.indices for b in batches])
        return LabeledBatch(
            np.concatenate([b.inputs for b in batches]),
            np.concatenate([b.labels for b in batches]),
            idx,
        )


def init_model(arch: ModelArch, seed: int) -> ParameterVector:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero."""
    rng = stream(seed, "init")
    parts = []
    for name, shp in arch.schema:
        if is_bias(name):
            parts.append(np.zeros(shp))
        else:
            bound = 1.0 / np.sqrt(shp[0])
            parts.append(rng.uniform(-bound, bound, size=shp))
    return ParameterVector(np.concatenate([p.reshape(-1) for p in parts]), arch.schema)


def _kind(w: ParameterVector) -> str:
    names = tuple(n for n, _ in w.schema)
    if names == ("W", "b"):
        return "logistic"
    if names == ("W1", "b1", "W2", "b2"):
        return "mlp"
    raise ShapeError(f"unrecognised schema {w.schema}")


def _check_batch(w: ParameterVector, batch: LabeledBatch) -> int:
    if len(batch) == 0:
        raise ValueError("batch is empty")
    first = w.schema[0][1]
    num_classes = w.schema[-1][1][0]
    if batch.feature_dim != first[0]:
        raise ShapeError(f"batch has {batch.feature_dim} features, model expects {first[0]}")
    if batch.labels.max() >= num_classes:
        raise ShapeError(f"label {batch.labels.max()} out of range for {num_classes} classes")
    return num_classes


def _forward(w: ParameterVector, x: np.ndarray):
    p = w.layers()
    if _kind(w) == "logistic":
        return x @ p["W"] + p["b"], None
    hidden = np.tanh(x @ p["W1"] + p["b1"])
    return hidden @ p["W2"] + p["b2"], hidden


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def predict_proba(w: ParameterVector, inputs: np.ndarray) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != w.schema[0][1][0]:
        raise ShapeError(f"inputs of shape {x.shape} do not fit model")
    logits, _ = _forward(w, x)
    return np.exp(_log_softmax(logits))


def per_sample_losses(w: ParameterVector, data: LabeledBatch) -> np.ndarray:
    _check_batch(w, data)
    logits, _ = _forward(w, data.inputs)
    logp = _log_softmax(logits)
    return -logp[np.arange(len(data)), data.labels]


def loss_and_grad(w: ParameterVector, batch: LabeledBatch) -> tuple[float, ParameterVector]:
    """Mean cross-entropy over ``batch`` and its exact gradient."""
    _check_batch(w, batch)
    x, y = batch.inputs, batch.labels
    n = len(batch)
    logits, hidden = _forward(w, x)
    logp = _log_softmax(logits)
    loss = float(-logp[np.arange(n), y].mean())

    dlogits = np.exp(logp)
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n

    if hidden is None:
        grads = [x.T @ dlogits, dlogits.sum(axis=0)]
    else:
        p = w.layers()
        dhidden = (dlogits @ p["W2"].T) * (1.0 - hidden**2)
        grads = [x.T @ dhidden, dhidden.sum(axis=0), hidden.T @ dlogits, dlogits.sum(axis=0)]
    return loss, w.with_values(np.concatenate([g.reshape(-1) for g in grads]))


def sgd_step(w: ParameterVector, grad: ParameterVector, lr: float) -> ParameterVector:
    w.check_compatible(grad)
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    return w.with_values(w.values - lr * grad.values)


def predict(w: ParameterVector, inputs: np.ndarray) -> np.ndarray:
    """Class with the largest logit; ties go to the lowest class index."""
    x = np.asarray(inputs, dtype=np.float64)
    logits, _ = _forward(w, x)
    # np.argmax returns the first maximum, which is the lowest index
    return np.argmax(logits, axis=1)


def predict_accuracy(w: ParameterVector, data: LabeledBatch) -> float:
    _check_batch(w, data)
    return float(np.mean(predict(w, data.inputs) == data.labels))


def max_confidence(w: ParameterVector, data: LabeledBatch) -> np.ndarray:
    return predict_proba(w, data.inputs).max(axis=1)
