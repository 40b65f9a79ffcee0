"""Seeded random streams.

Every randomized step draws from its own Philox stream, keyed by the
experiment seed plus a purpose path such as ``("shuffle", round, client)``.
Philox is counter-based, so a stream's output depends only on its key and
never on how many other streams were consumed first. That is what keeps
results identical when clients train in parallel.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_word(part: object) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"stream key parts must be non-negative, got {part}")
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def stream(seed: int, *purpose: object) -> np.random.Generator:
    """Return an independent generator for ``(seed, *purpose)``."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key_word(p) for p in purpose))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *purpose: object) -> int:
    """Collapse ``(seed, *purpose)`` into a single 63-bit integer seed."""
    return int(stream(seed, *purpose).integers(0, 2**63 - 1))
