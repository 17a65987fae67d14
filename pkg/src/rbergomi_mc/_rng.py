"""Deterministic random substreams.

Every batch of paths draws from its own ``SeedSequence`` child, addressed by an
explicit key tuple rather than by ``spawn()`` order, so the partition of work
into batches (not the number of worker threads) fixes the output bit-for-bit.
"""

from __future__ import annotations

from typing import Union

import numpy as np

SeedLike = Union[int, np.random.SeedSequence]


def as_seed_sequence(seed: SeedLike) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.SeedSequence(seed)


def substream(seed: SeedLike, *key: int) -> np.random.SeedSequence:
    """Child sequence of ``seed`` addressed by ``key``."""
    ss = as_seed_sequence(seed)
    return np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + tuple(int(k) for k in key))


def generator(seed: SeedLike | np.random.Generator) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(as_seed_sequence(seed)))
