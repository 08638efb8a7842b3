"""Seeded, splittable random streams.

Every stochastic operation takes an explicit ``numpy.random.Generator``.
Streams are Philox (counter-based) generators keyed by ``(seed, *path)``, so
the stream for trial 7 of a sweep is the same no matter how many other
trials ran before it or on which worker.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed: int, *path: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def split(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Independent child streams of ``rng`` (never shares state with the parent)."""
    return list(rng.spawn(n))
