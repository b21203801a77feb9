"""
Deterministic seed derivation
Every random stream in a run is keyed by (seed, client, round, purpose) so that
parallel execution order never changes results
Reference: https://numpy.org/doc/stable/reference/random/bit_generators/generated/numpy.random.SeedSequence.html
"""
from enum import IntEnum

import numpy as np


class Stream(IntEnum):
    """Purpose tags for derived random streams."""

    INIT = 1
    SHUFFLE = 2
    REPLAY = 3
    GENERATOR = 4
    SERVER_REPLAY = 5
    POISON = 6
    SCENARIO = 7
    DATASET = 8


def derive_seed(seed: int, *keys: int) -> int:
    """
    Derive an independent 63-bit seed from a root seed and integer keys.

    Args:
        seed: Root experiment seed
        keys: Additional non-negative integers (client id, round, Stream tag ...)

    Returns:
        Seed suitable for numpy.random.default_rng
    """
    state = np.random.SeedSequence([int(seed), *(int(k) for k in keys)]).generate_state(2, dtype=np.uint32)
    return (int(state[0]) << 31) ^ int(state[1])


def rng_for(seed: int, *keys: int) -> np.random.Generator:
    """Shortcut for a Generator seeded with derive_seed(seed, *keys)."""
    return np.random.default_rng(derive_seed(seed, *keys))


def seed32(seed: int) -> int:
    """
    Fold a derived seed into [0, 2**32), the range scikit-learn accepts for random_state.

    Reference: https://scikit-learn.org/stable/glossary.html#term-random_state
    """
    return int(np.random.SeedSequence(int(seed)).generate_state(1, dtype=np.uint32)[0])
