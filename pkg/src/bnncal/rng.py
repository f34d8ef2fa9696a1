"""Seedable, splittable random streams.

Every stochastic step draws from a ``numpy.random.Generator`` built on PCG64
from a ``SeedSequence``; independent child streams come from ``spawn``.
Normal variates use the Box-Muller transform over the generator's uniforms
so the normal stream is a documented function of the uniform stream.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed, *path: int) -> np.random.Generator:
    """Generator for ``seed``, optionally addressed by a spawn path.

    ``make_rng(7, 2)`` is the third child of seed 7; the same path always
    yields the same stream.
    """
    ss = np.random.SeedSequence(seed)
    for key in path:
        ss = ss.spawn(key + 1)[key]
    return np.random.Generator(np.random.PCG64(ss))


def standard_normal(rng: np.random.Generator, size) -> np.ndarray:
    """Standard normal draws by Box-Muller, consuming 2 uniforms per pair."""
    shape = (size,) if np.isscalar(size) else tuple(size)
    n = int(np.prod(shape, dtype=np.int64))
    half = (n + 1) // 2
    u = rng.random((2, half))
    # random() lies in [0, 1); shift the radius uniform into (0, 1]
    radius = np.sqrt(-2.0 * np.log1p(-u[0]))
    angle = 2.0 * np.pi * u[1]
    z = np.empty(2 * half)
    z[0::2] = radius * np.cos(angle)
    z[1::2] = radius * np.sin(angle)
    return z[:n].reshape(shape)
