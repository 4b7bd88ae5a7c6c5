"""
Counter-based seed splitting.

Every random stream in a run is derived from the single top-level seed and
a tuple of keys naming the cell (experiment, n, seed index, engine), so the
numbers a cell sees do not depend on which worker runs it or when.
"""
import zlib
from typing import Union

import numpy as np

Key = Union[int, str]


def _key_to_int(key: Key) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode('utf-8'))
    if key < 0:
        raise ValueError(f"Seed keys must be non-negative, got {key}")
    return int(key)


def derive_seed_sequence(seed: int, *keys: Key) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=tuple(_key_to_int(k) for k in keys))


def derive_rng(seed: int, *keys: Key) -> np.random.Generator:
    return np.random.default_rng(derive_seed_sequence(seed, *keys))


def derive_int(seed: int, *keys: Key) -> int:
    """A 32-bit integer seed for APIs that take plain ints (LA-MC draws)."""
    return int(derive_seed_sequence(seed, *keys).generate_state(1)[0])
