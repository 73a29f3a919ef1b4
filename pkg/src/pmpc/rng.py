"""Deterministic random-stream bookkeeping.

Every stochastic component draws from its own substream keyed by
(master seed, episode index, role) through ``numpy.random.SeedSequence``
so that adding draws to one component never shifts another, and batch
runs are reproducible regardless of execution order.
"""

from __future__ import annotations

import numpy as np

# Stable role codes; appending new roles keeps old streams unchanged.
_ROLES = {
    "truth": 0,       # true disturbance / failure realization
    "particles": 1,   # sampling scenario particles for planning
    "sensor": 2,      # measurement noise
    "explore": 3,     # exploration noise added to executed actions
    "init": 4,        # model/weight initialization
    "mppi": 5,        # action-sequence sampling
}


def substream(seed: int, episode: int, role: str) -> np.random.Generator:
    if role not in _ROLES:
        raise ValueError(f"unknown rng role {role!r}; known: {sorted(_ROLES)}")
    ss = np.random.SeedSequence(entropy=(int(seed), int(episode), _ROLES[role]))
    return np.random.default_rng(ss)
