"""
Deterministic RNG stream derivation.

Every unit of parallel work (a trial, a seed run, a donor) derives its own
stream from the master seed and a stable key, so results do not depend on
worker count or scheduling order.
"""

import zlib
from typing import Union

import numpy as np

Key = Union[int, str]


def _as_int(key: Key) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    return int(key)


def derive_seed(master_seed: int, *keys: Key) -> int:
    """
    Derive a 32-bit seed from a master seed and a sequence of keys.

    Args:
        master_seed: Run-level seed
        *keys: Integers or strings identifying the unit of work

    Returns:
        Integer seed in [0, 2**32)
    """
    entropy = [int(master_seed)] + [_as_int(k) for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def rng_for(master_seed: int, *keys: Key) -> np.random.Generator:
    """Return a numpy Generator on the stream identified by the keys."""
    return np.random.default_rng(derive_seed(master_seed, *keys))
