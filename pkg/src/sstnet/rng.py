"""Seeded, splittable random streams.

Every stochastic API in the package takes an integer seed. Independent
sub-streams are derived by appending integer keys to the seed, so that
``stream(seed, 1)`` and ``stream(seed, 2)`` never overlap and the same
``(seed, *keys)`` always reproduces the same draws.
"""

import zlib

import numpy as np


def _key(k):
    if isinstance(k, str):
        return zlib.crc32(k.encode("utf-8"))
    return int(k)


def stream(seed, *keys):
    """Return a PCG64 generator keyed by ``seed`` and optional sub-keys."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_key(k) for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
