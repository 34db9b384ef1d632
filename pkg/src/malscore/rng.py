"""Counter-based Gaussian increment generation.

Brownian increments are produced per fixed 1024-path block from a Philox
bit generator keyed by (seed, block_index).  The draws a path sees therefore
depend only on (seed, path_index, step), never on how the caller chunks the
ensemble or on thread scheduling, which is what makes re-simulation bitwise
reproducible.
"""

from __future__ import annotations

import numpy as np
from numpy.random import Generator, Philox

BLOCK = 1024

# key-space offsets for auxiliary streams so they never collide with the
# per-block path streams (block indices are < 2**40 in practice)
_X0_STREAM = np.uint64(2**63)
_AUX_STREAM = np.uint64(2**63 + 1)


def block_generator(seed: int, block_index: int) -> Generator:
    """Generator for one 1024-path block, a pure function of (seed, block)."""
    return Generator(Philox(key=[np.uint64(seed), np.uint64(block_index)]))


def x0_generator(seed: int) -> Generator:
    """Dedicated stream for drawing initial conditions."""
    return Generator(Philox(key=[np.uint64(seed), _X0_STREAM]))


def aux_generator(seed: int) -> Generator:
    """Stream for auxiliary randomness (bootstrap resamples, projections...)."""
    return Generator(Philox(key=[np.uint64(seed), _AUX_STREAM]))


class BrownianStore:
    """Reproducible Gaussian increments for an ensemble of paths.

    Parameters
    ----------
    seed : int
        64-bit master seed.
    n_steps : int
        Number of increments per path.
    d : int
        Noise dimension.
    dt : float
        Step size; increments are standard normals scaled by sqrt(dt).
    """

    def __init__(self, seed: int, n_steps: int, d: int, dt: float):
        self.seed = int(seed)
        self.n_steps = int(n_steps)
        self.d = int(d)
        self.dt = float(dt)
        self._sqdt = np.sqrt(dt)

    def normals(self, lo: int, hi: int) -> np.ndarray:
        """Unscaled standard-normal draws for paths [lo, hi), shape (hi-lo, n_steps, d)."""
        if not 0 <= lo <= hi:
            raise ValueError(f"bad path range [{lo}, {hi})")
        n, d = self.n_steps, self.d
        out = np.empty((hi - lo, n, d))
        if hi == lo:
            return out
        for b in range(lo // BLOCK, (hi - 1) // BLOCK + 1):
            blk = block_generator(self.seed, b).standard_normal((BLOCK, n, d))
            s0, s1 = max(lo, b * BLOCK), min(hi, (b + 1) * BLOCK)
            out[s0 - lo : s1 - lo] = blk[s0 - b * BLOCK : s1 - b * BLOCK]
        return out

    def increments(self, lo: int, hi: int) -> np.ndarray:
        """Brownian increments (already scaled by sqrt(dt)) for paths [lo, hi)."""
        return self.normals(lo, hi) * self._sqdt
