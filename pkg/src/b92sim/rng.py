"""Deterministic random-stream helpers shared by every stochastic module."""
from __future__ import annotations

import numpy as np

RandomStream = np.random.Generator


def stream(seed: int | np.random.SeedSequence | np.random.Generator) -> np.random.Generator:
    """Return a PCG64 generator for `seed`, passing generators through unchanged.

    Equal seeds yield bit-identical draw sequences, which is what makes whole
    simulation runs reproducible from a single integer.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def spawn(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Derive `n` independent child streams from `rng` deterministically."""
    if n < 0:
        raise ValueError("cannot spawn a negative number of streams")
    return rng.spawn(n)
