"""Labeled random streams.

One run seed fans out to named sub-streams (world, init, noise, sampling,
oracle, ...) so adding or removing one consumer of randomness never shifts
the draws seen by another.
"""

import zlib

import numpy as np


def _key(label) -> int:
    if isinstance(label, int):
        return label
    return zlib.crc32(str(label).encode("utf-8"))


def seed_sequence(seed: int, *labels) -> np.random.SeedSequence:
    return np.random.SeedSequence((int(seed),) + tuple(_key(l) for l in labels))


def stream(seed: int, *labels) -> np.random.Generator:
    """Deterministic generator for (seed, labels...)."""
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *labels)))


def derive(seed: int, *labels) -> int:
    """Child integer seed, stable across runs and platforms."""
    return int(seed_sequence(seed, *labels).generate_state(1, np.uint32)[0])
