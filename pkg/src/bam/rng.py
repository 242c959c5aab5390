"""Deterministic per-purpose random streams.

A stream is identified by a master seed plus a tuple of keys (method name,
replicate, purpose, ...). Keys are hashed into the ``spawn_key`` of a
``SeedSequence``, so streams are independent of each other and of the order in
which they are requested: adding a method never perturbs another method's draws.
"""

import zlib

import numpy as np


def _key(k) -> int:
    if isinstance(k, (bool, np.bool_)):
        return int(k)
    if isinstance(k, (int, np.integer)):
        if k < 0:
            raise ValueError(f"stream keys must be non-negative, got {k}")
        return int(k)
    return zlib.crc32(str(k).encode("utf-8"))


def stream(seed: int, *keys) -> np.random.Generator:
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(k) for k in keys))
    return np.random.Generator(np.random.PCG64(seq))
