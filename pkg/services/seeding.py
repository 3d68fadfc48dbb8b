"""
Named random streams derived from one run seed.

Each concern draws from its own stream so toggling one feature (dropout,
shuffling, an ablation) does not shift the random numbers of the others.
"""

import numpy as np

STREAMS = {
    "init": 0,
    "shuffle": 1,
    "dropout": 2,
    "ablation": 3,
    "subset": 4,
    "candidates": 5,
}


def stream(seed: int, name: str, *counters: int) -> np.random.Generator:
    """Generator for ``name`` under ``seed``; ``counters`` (e.g. the epoch) fork it further."""
    return np.random.default_rng([int(seed), STREAMS[name], *(int(c) for c in counters)])
