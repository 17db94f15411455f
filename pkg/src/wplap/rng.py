"""Reproducible random streams (Philox, counter-based)."""
import numpy as np


def make_rng(seed=0, *stream):
    """Generator for ``seed`` and an optional tuple of stream ids."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *map(int, stream)])
    return np.random.Generator(np.random.Philox(ss))
