"""Seeded random-number generation with a fixed draw-order contract.

Every stochastic operation in the package draws from an `Rng`, never from
global numpy state. The number of logical draws is tracked so tests can
assert that deterministic code paths consume none, and child streams are
derived from the master seed plus an integer key so parallel work stays
reproducible.
"""

from __future__ import annotations

import numpy as np


class Rng:
    """Deterministic generator: same seed, same sequence of samples.

    `draws` counts logical variates requested (one per Bernoulli trial,
    one per normal sample), not raw bits consumed.
    """

    def __init__(self, seed: int | tuple[int, ...]):
        if isinstance(seed, int):
            seed = (seed,)
        self._key = tuple(int(s) for s in seed)
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self._key)))
        self.draws = 0

    @property
    def key(self) -> tuple[int, ...]:
        return self._key

    def child(self, *subkey: int) -> "Rng":
        """Independent substream keyed by (master_seed, *subkey)."""
        return Rng(self._key + tuple(int(k) for k in subkey))

    def bernoulli(self, p_success: float, size) -> np.ndarray:
        """0/1 float64 array; consumes one draw per entry, C-order."""
        self.draws += int(np.prod(size))
        return (self._gen.random(size) < p_success).astype(np.float64)

    def normal(self, size, scale: float = 1.0) -> np.ndarray:
        self.draws += int(np.prod(size))
        return self._gen.normal(0.0, scale, size)

    def uniform(self, size) -> np.ndarray:
        self.draws += int(np.prod(size))
        return self._gen.random(size)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        self.draws += 1 if size is None else int(np.prod(size))
        return self._gen.integers(low, high, size=size)

    def shuffle(self, arr: np.ndarray) -> None:
        self.draws += len(arr)
        self._gen.shuffle(arr)
