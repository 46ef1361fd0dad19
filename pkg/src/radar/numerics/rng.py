"""Named, seedable counter-based random streams.

Every stochastic operation takes an explicit ``numpy.random.Generator``;
streams derived from the same seed and names are identical across runs.
"""

from __future__ import annotations

import math
import zlib

import numpy as np

RandomStream = np.random.Generator


def stream_key(*names: str | int) -> list[int]:
    """Map stream names to integers usable as seed-sequence entropy."""
    key: list[int] = []
    for name in names:
        if isinstance(name, int):
            key.append(name & 0xFFFFFFFF)
        else:
            key.append(zlib.crc32(name.encode("utf-8")))
    return key


def make_rng(seed: int, *names: str | int) -> RandomStream:
    """Philox generator for ``seed`` and a stream path such as ("dropout", 3)."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, *stream_key(*names)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def glorot_uniform(rng: RandomStream, fan_in: int, fan_out: int) -> np.ndarray:
    """Uniform(-a, a) weights with ``a = sqrt(6 / (fan_in + fan_out))``."""
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))
