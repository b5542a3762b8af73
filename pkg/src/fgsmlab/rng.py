"""Named random streams.

Each consumer (shuffling, GradAlign noise, PGD starts, ...) draws from its own
counter-based Philox generator keyed by ``(seed, purpose, *extra)``, so adding
a new consumer never shifts the numbers another one sees.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, purpose: str, *extra: int) -> np.random.Generator:
    """Return an independent generator for ``purpose`` under ``seed``."""
    key = (zlib.crc32(purpose.encode("utf-8")),) + tuple(int(e) for e in extra)
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(seq))


def as_generator(rng, purpose: str = "default") -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return stream(0 if rng is None else rng, purpose)
