"""Deterministic seed derivation shared by every randomized component."""

import numpy as np


def derive_seed(*keys: int) -> int:
    """Collapse a tuple of integer keys into one stable unsigned seed."""
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(1, np.uint64)
    return int(state[0])


def seeded_rng(*keys: int) -> np.random.Generator:
    """A fresh generator keyed by the given integers."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(k) for k in keys])))
