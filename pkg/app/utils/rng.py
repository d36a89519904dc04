"""Seed substreams.

Every random quantity in the lab is drawn from a numpy ``SeedSequence``
child keyed by ``(root seed, index)``. Child ``i`` is the same object that
``SeedSequence(root).spawn(n)[i]`` would produce for any ``n > i``, so a
subject's draws never depend on how many subjects are generated or on the
order in which workers pick up jobs.
"""

import numpy as np


def substream(root: int, index: int) -> np.random.Generator:
    """Generator for child ``index`` of ``root``."""
    return np.random.default_rng(np.random.SeedSequence(root, spawn_key=(index,)))


def derived_seed(root: int, *keys: int) -> int:
    """Stable 63-bit integer seed for a keyed job (replicate, oracle, ...)."""
    state = np.random.SeedSequence(root, spawn_key=tuple(keys)).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))
