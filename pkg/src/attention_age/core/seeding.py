"""Deterministic random streams derived from one experiment seed.

Every consumer asks for a generator keyed by ``(seed, stream name, index...)``
so that per-sample work can run in any order, or in parallel, and still
produce identical numbers.
"""

from __future__ import annotations

import zlib
from typing import Union

import numpy as np

Key = Union[int, str]


def _key_to_int(key: Key) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    if key < 0:
        raise ValueError(f"seed keys must be non-negative, got {key}")
    return int(key)


def seed_sequence(seed: int, *keys: Key) -> np.random.SeedSequence:
    """Return the SeedSequence for ``seed`` specialised by ``keys``."""
    return np.random.SeedSequence([_key_to_int(seed), *(_key_to_int(k) for k in keys)])


def rng(seed: int, *keys: Key) -> np.random.Generator:
    """Return an independent PCG64 generator for ``(seed, *keys)``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *keys)))


def derive_seed(seed: int, *keys: Key) -> int:
    """Return a 32-bit integer sub-seed for ``(seed, *keys)``."""
    return int(seed_sequence(seed, *keys).generate_state(1, dtype=np.uint32)[0])


__all__ = ["rng", "derive_seed", "seed_sequence"]
