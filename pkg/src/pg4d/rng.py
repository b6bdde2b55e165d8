"""Seed derivation for all randomized subsystems.

One run seed fans out into independent named streams, so adding or
reordering RNG consumers never silently reshuffles another subsystem's
randomness.
"""

import numpy as np

# Fixed registry; extend by appending, never by reordering.
_STREAMS = {
    "scene_init": 0,
    "stage1": 1,
    "stage2": 2,
    "scenegen": 3,
    "gradcheck": 4,
    "fixtures": 5,
}


def stream(seed: int, name: str) -> np.random.Generator:
    """Return the dedicated generator for one named subsystem."""
    if name not in _STREAMS:
        raise KeyError(f"unknown rng stream {name!r}; known: {sorted(_STREAMS)}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_STREAMS[name],))
    return np.random.Generator(np.random.PCG64(ss))


def substream(seed: int, name: str, index: int) -> np.random.Generator:
    """Generator for the ``index``-th child of a named stream (e.g. per scene)."""
    if name not in _STREAMS:
        raise KeyError(f"unknown rng stream {name!r}; known: {sorted(_STREAMS)}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_STREAMS[name], int(index)))
    return np.random.Generator(np.random.PCG64(ss))
