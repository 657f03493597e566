"""Counter-based random stream splitting.

Every stream is ``SeedSequence(root, spawn_key=key)``, so a stream depends only
on the root seed and its key: adding a node never shifts another node's draws.
"""
from __future__ import annotations

import numpy as np

MEDIUM_STREAM = 0
NODE_STREAM = 1
REPLICATE_STREAM = 3
NOISE_CHECK_STREAM = 4
SWEEP_STREAM = 5


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


def medium_rng(seed: int) -> np.random.Generator:
    return stream(seed, MEDIUM_STREAM)


def node_rng(seed: int, node_id: int) -> np.random.Generator:
    return stream(seed, NODE_STREAM, node_id)


def _derived_seed(seed: int, *key: int) -> int:
    state = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)).generate_state(2, np.uint32)
    return int(state[0]) << 32 | int(state[1])


def replicate_seed(seed: int, index: int) -> int:
    """Root seed of replicate ``index``; replicate 0 keeps the base seed."""
    if index == 0:
        return int(seed)
    return _derived_seed(seed, REPLICATE_STREAM, index)


def sweep_seed(seed: int, index: int) -> int:
    """Root seed of point ``index`` in a parameter sweep; every point gets fresh draws."""
    return _derived_seed(seed, SWEEP_STREAM, index)
