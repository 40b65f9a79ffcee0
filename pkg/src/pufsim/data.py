"""Synthetic data, federated partitioning and forget-subset selection."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._rng import stream
from .nn import LabeledBatch


class PartitionError(RuntimeError):
    """A partitioner could not satisfy its constraints."""


class DatasetFormatError(ValueError):
    """A dataset container could not be parsed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class DatasetInvariantError(ValueError):
    """A dataset violates a structural invariant (e.g. an empty client)."""


@dataclass(frozen=True, eq=False)
class FederatedDataset:
    clients: tuple[LabeledBatch, ...]
    test: LabeledBatch
    num_classes: int

    def __post_init__(self):
        object.__setattr__(self, "clients", tuple(self.clients))
        for cid, c in enumerate(self.clients):
            if len(c) == 0:
                raise DatasetInvariantError(f"client {cid} holds no samples")
        seen = [c.indices for c in self.clients if c.indices is not None]
        if seen:
            all_idx = np.concatenate(seen)
            if np.unique(all_idx).size != all_idx.size:
                raise DatasetInvariantError("clients share sample indices")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FederatedDataset):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and len(self.clients) == len(other.clients)
            and all(a == b for a, b in zip(self.clients, other.clients))
            and self.test == other.test
        )

    @property
    def num_clients(self) -> int:
        return len(self.clients)

    @property
    def sizes(self) -> list[int]:
        return [len(c) for c in self.clients]

    def replace_client(self, cid: int, data: LabeledBatch) -> FederatedDataset:
        clients = list(self.clients)
        clients[cid] = data
        return FederatedDataset(tuple(clients), self.test, self.num_classes)


@dataclass(frozen=True)
class ForgetSplit:
    forget: LabeledBatch
    retain: LabeledBatch
    source_client: int | None = None


def generate_synthetic(
    num_classes: int,
    feature_dim: int,
    samples_per_class: int,
    class_separation: float,
    seed: int,
) -> tuple[LabeledBatch, LabeledBatch]:
    """Gaussian blobs with unit covariance, split 80/20 per class.

    Class means are random directions rescaled so the closest pair sits
    exactly ``class_separation`` apart. Splitting is stratified, so the
    train label histogram is balanced.
    """
    if min(num_classes, feature_dim, samples_per_class) < 1:
        raise ValueError("counts must be >= 1")
    rng = stream(seed, "data", "synthetic")
    means = rng.normal(size=(num_classes, feature_dim))
    if num_classes > 1:
        gaps = np.linalg.norm(means[:, None, :] - means[None, :, :], axis=-1)
        closest = gaps[np.triu_indices(num_classes, k=1)].min()
        means *= class_separation / closest
    n_train = int(np.floor(0.8 * samples_per_class + 0.5))
    if samples_per_class > 1:
        n_train = min(max(n_train, 1), samples_per_class - 1)

    train_x, train_y, test_x, test_y = [], [], [], []
    for c in range(num_classes):
        x = means[c] + rng.normal(size=(samples_per_class, feature_dim))
        train_x.append(x[:n_train])
        test_x.append(x[n_train:])
        train_y.append(np.full(n_train, c))
        test_y.append(np.full(samples_per_class - n_train, c))

    def _mix(xs, ys, tag):
        x, y = np.concatenate(xs), np.concatenate(ys)
        order = stream(seed, "data", tag).permutation(len(y))
        return LabeledBatch(x[order], y[order], np.arange(len(y)))

    return _mix(train_x, train_y, "train_order"), _mix(test_x, test_y, "test_order")


def _build(train: LabeledBatch, assignment: list[np.ndarray], test: LabeledBatch | None, num_classes: int | None):
    if test is None:
        test = LabeledBatch(np.empty((0, train.feature_dim)), np.empty(0, dtype=np.int64))
    if num_classes is None:
        num_classes = int(max(train.labels.max(), test.labels.max() if len(test) else 0)) + 1
    if train.indices is None:
        train = LabeledBatch(train.inputs, train.labels, np.arange(len(train)))
    clients = [train.take(np.sort(rows)) for rows in assignment]
    return FederatedDataset(tuple(clients), test, num_classes)


def partition_iid(
    train: LabeledBatch,
    num_clients: int,
    seed: int,
    test: LabeledBatch | None = None,
    num_classes: int | None = None,
) -> FederatedDataset:
    if num_clients < 1:
        raise ValueError("num_clients must be >= 1")
    if len(train) < num_clients:
        raise PartitionError(f"{len(train)} samples cannot fill {num_clients} clients")
    order = stream(seed, "partition", "iid").permutation(len(train))
    return _build(train, np.array_split(order, num_clients), test, num_classes)


def _largest_remainder(total: int, proportions: np.ndarray) -> np.ndarray:
    raw = proportions * total
    counts = np.floor(raw).astype(np.int64)
    short = total - counts.sum()
    if short:
        # stable sort keeps ties on the lowest client id
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def partition_lda(
    train: LabeledBatch,
    num_clients: int,
    alpha: float,
    min_per_client: int = 2,
    seed: int = 0,
    test: LabeledBatch | None = None,
    num_classes: int | None = None,
    max_retries: int = 100,
) -> FederatedDataset:
    """Label-skew split: per class, Dirichlet(alpha) shares over clients.

    Each class's samples are shuffled and cut into per-client counts given by
    the drawn shares (largest-remainder rounding). The whole draw is repeated
    until every client holds at least ``min_per_client`` samples, up to
    ``max_retries`` attempts.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if num_clients < 1:
        raise ValueError("num_clients must be >= 1")
    labels = train.labels
    classes = np.unique(labels)
    for attempt in range(max_retries):
        rng = stream(seed, "partition", "lda", attempt)
        assignment: list[list[np.ndarray]] = [[] for _ in range(num_clients)]
        for c in classes:
            members = np.flatnonzero(labels == c)
            members = members[rng.permutation(members.size)]
            shares = rng.dirichlet(np.full(num_clients, alpha))
            cuts = np.cumsum(_largest_remainder(members.size, shares))[:-1]
            for cid, chunk in enumerate(np.split(members, cuts)):
                assignment[cid].append(chunk)
        rows = [np.concatenate(a) if a else np.empty(0, dtype=np.int64) for a in assignment]
        if min(r.size for r in rows) >= max(min_per_client, 1):
            return _build(train, rows, test, num_classes)
    raise PartitionError(
        f"no LDA draw gave every client >= {min_per_client} samples after {max_retries} attempts"
    )


def partition_exclusive_class(
    train: LabeledBatch,
    num_clients: int,
    owner: int,
    label: int,
    seed: int,
    test: LabeledBatch | None = None,
    num_classes: int | None = None,
) -> FederatedDataset:
    """Give every sample of ``label`` to client ``owner``; spread the rest IID.

    The owner holds nothing but that class, so its data forms a cluster no
    other client can explain.
    """
    if not 0 <= owner < num_clients:
        raise ValueError(f"owner {owner} out of range for {num_clients} clients")
    mine = np.flatnonzero(train.labels == label)
    rest = np.flatnonzero(train.labels != label)
    if mine.size == 0:
        raise PartitionError(f"no samples with label {label}")
    if num_clients > 1 and rest.size < num_clients - 1:
        raise PartitionError("too few samples for the remaining clients")
    rest = rest[stream(seed, "partition", "exclusive").permutation(rest.size)]
    shards = iter(np.array_split(rest, num_clients - 1)) if num_clients > 1 else iter(())
    rows = [mine if cid == owner else next(shards) for cid in range(num_clients)]
    return _build(train, rows, test, num_classes)


def select_forget_subset(client_data: LabeledBatch, fraction: float, seed: int, source_client: int | None = None) -> ForgetSplit:
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    n = len(client_data)
    k = int(np.floor(fraction * n + 0.5))
    if k == 0 or k == n:
        raise ValueError(f"fraction {fraction} of {n} samples leaves an empty forget or retain set")
    order = stream(seed, "forget_subset").permutation(n)
    return ForgetSplit(
        forget=client_data.take(np.sort(order[:k])),
        retain=client_data.take(np.sort(order[k:])),
        source_client=source_client,
    )


# Container layout (all integers little-endian):
#   magic b"PUFDS\x00" | version u8 | num_classes u64 | feature_dim u64 | num_blocks u64
#   block table: num_blocks x (offset u64, rows u64)   -- clients first, test last
#   each block: inputs f64[rows*feature_dim] | labels i64[rows] | indices i64[rows]
# Blocks without indices store -1 in every slot.
MAGIC = b"PUFDS\x00"
VERSION = 1
_HEADER = struct.Struct("<6sBQQQ")
_ENTRY = struct.Struct("<QQ")


def _block_bytes(batch: LabeledBatch) -> bytes:
    idx = batch.indices if batch.indices is not None else np.full(len(batch), -1, dtype=np.int64)
    return (
        batch.inputs.astype("<f8").tobytes()
        + batch.labels.astype("<i8").tobytes()
        + np.asarray(idx).astype("<i8").tobytes()
    )


def dumps_dataset(fd: FederatedDataset) -> bytes:
    blocks = list(fd.clients) + [fd.test]
    dim = fd.clients[0].feature_dim if fd.clients else fd.test.feature_dim
    payloads = [_block_bytes(b) for b in blocks]
    offset = _HEADER.size + _ENTRY.size * len(blocks)
    table = b""
    for b, p in zip(blocks, payloads):
        table += _ENTRY.pack(offset, len(b))
        offset += len(p)
    head = _HEADER.pack(MAGIC, VERSION, fd.num_classes, dim, len(blocks))
    return head + table + b"".join(payloads)


def loads_dataset(raw: bytes) -> FederatedDataset:
    if len(raw) < _HEADER.size:
        raise DatasetFormatError("file shorter than header", len(raw))
    magic, version, num_classes, dim, num_blocks = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise DatasetFormatError("bad magic", 0)
    if version != VERSION:
        raise DatasetFormatError(f"unsupported version {version}", 6)
    if num_blocks < 1:
        raise DatasetFormatError("container has no test block", 23)
    table_end = _HEADER.size + _ENTRY.size * num_blocks
    if len(raw) < table_end:
        raise DatasetFormatError("truncated block table", len(raw))
    blocks = []
    for i in range(num_blocks):
        entry_at = _HEADER.size + _ENTRY.size * i
        offset, rows = _ENTRY.unpack_from(raw, entry_at)
        size = rows * (dim * 8 + 16)
        if offset < table_end or offset + size > len(raw):
            raise DatasetFormatError(f"block {i} runs past end of file", min(offset, len(raw)))
        x = np.frombuffer(raw, "<f8", rows * dim, offset).reshape(rows, dim)
        y = np.frombuffer(raw, "<i8", rows, offset + rows * dim * 8)
        idx = np.frombuffer(raw, "<i8", rows, offset + rows * dim * 8 + rows * 8)
        if rows and idx.min() < 0:
            idx = None
        if rows and (y.min() < 0 or y.max() >= num_classes):
            raise DatasetFormatError(f"block {i} has labels outside [0, {num_classes})", offset + rows * dim * 8)
        blocks.append(LabeledBatch(x.astype(np.float64), y.astype(np.int64), None if idx is None else idx.astype(np.int64)))
    return FederatedDataset(tuple(blocks[:-1]), blocks[-1], int(num_classes))


def save_dataset(fd: FederatedDataset, path: str | Path) -> None:
    Path(path).write_bytes(dumps_dataset(fd))


def load_dataset(path: str | Path) -> FederatedDataset:
    return loads_dataset(Path(path).read_bytes())
