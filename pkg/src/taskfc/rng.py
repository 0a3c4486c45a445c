"""Keyed random streams.

Each stream is a Philox generator whose key is derived from a user seed plus
a tuple of integers (purpose tag, replication, subject, ...).  Streams with
different keys are statistically independent, and a given key always yields
the same draws no matter in which order the streams are created.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgumentError

# Purpose tags keep streams for different jobs apart under one seed.
SHIFTS = 1
SUBJECT = 2
REPLICATION = 3
COIN = 4

_SEED_LIMIT = 2**64


def check_seed(seed) -> int:
    if isinstance(seed, bool) or int(seed) != seed or not 0 <= int(seed) < _SEED_LIMIT:
        raise InvalidArgumentError(f"seed must be an integer in [0, 2**64), got {seed!r}")
    return int(seed)


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Generator for the stream identified by ``(seed, *keys)``."""
    seq = np.random.SeedSequence(entropy=check_seed(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(seed: int, *keys: int) -> int:
    """A 64-bit child seed, e.g. for one Monte Carlo replication."""
    seq = np.random.SeedSequence(entropy=check_seed(seed), spawn_key=tuple(int(k) for k in keys))
    return int(seq.generate_state(1, dtype=np.uint64)[0])
