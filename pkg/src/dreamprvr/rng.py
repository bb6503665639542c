"""Seeded random streams."""

from __future__ import annotations

import numpy as np


class Rng:
    """A seeded normal/uniform sampler with derivable independent substreams.

    Two instances built from the same seed (and the same ``key`` path) emit
    identical sample streams.
    """

    def __init__(self, seed: int, key: tuple[int, ...] = ()):
        self.seed = int(seed) & 0xFFFF_FFFF_FFFF_FFFF
        self.key = tuple(int(k) for k in key)
        entropy = [self.seed, *self.key] if self.key else self.seed
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def spawn(self, *key: int) -> Rng:
        """Independent substream identified by ``key`` below this stream's key."""
        return Rng(self.seed, self.key + tuple(key))

    def normal(self, shape, mean=0.0, std=1.0, dtype=np.float64) -> np.ndarray:
        draw = self._gen.standard_normal(shape)
        if std != 1.0:
            draw = draw * std
        if np.any(mean != 0.0):
            draw = draw + mean
        return np.asarray(draw, dtype=dtype)

    def uniform(self, shape, low=0.0, high=1.0, dtype=np.float64) -> np.ndarray:
        return np.asarray(self._gen.uniform(low, high, shape), dtype=dtype)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    @property
    def state(self) -> dict:
        return {"seed": self.seed, "key": list(self.key), "bit_generator": self._gen.bit_generator.state}

    @classmethod
    def from_state(cls, state: dict) -> Rng:
        rng = cls(state["seed"], tuple(state["key"]))
        rng._gen.bit_generator.state = state["bit_generator"]
        return rng
