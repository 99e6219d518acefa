"""Seeded random streams.

Every trajectory owns one :class:`RandomSource`.  Sub-streams are derived
from a :class:`numpy.random.SeedSequence` by extending its ``spawn_key``,
so the draws a component sees never depend on what other components drew.

Splitting rule (stable, part of the reproducibility contract)::

    trial stream     SeedSequence(seed, spawn_key=(trial_index,))
    protocol stream  ... + (0,)
    opinion i        ... + (1, i)      aggregate-mode outflows of opinion i
    adversary        ... + (2,)
    light labels     ... + (3,)
"""
from __future__ import annotations

import numpy as np

_MAIN, _OPINION, _ADVERSARY, _LABELS = 0, 1, 2, 3


class RandomSource:
    """Bundle of independent, lazily created generators for one run."""

    def __init__(self, seed: int = 0, trial_index: int | None = None, _key: tuple = ()):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = int(seed)
        self.trial_index = trial_index
        key = _key if trial_index is None else (int(trial_index),) + tuple(_key)
        self._key = tuple(key)
        self._streams: dict[tuple, np.random.Generator] = {}

    def _stream(self, *suffix: int) -> np.random.Generator:
        gen = self._streams.get(suffix)
        if gen is None:
            ss = np.random.SeedSequence(self.seed, spawn_key=self._key + suffix)
            gen = np.random.Generator(np.random.PCG64(ss))
            self._streams[suffix] = gen
        return gen

    @property
    def main(self) -> np.random.Generator:
        return self._stream(_MAIN)

    def opinion(self, index: int) -> np.random.Generator:
        return self._stream(_OPINION, int(index))

    @property
    def adversary(self) -> np.random.Generator:
        return self._stream(_ADVERSARY)

    @property
    def labels(self) -> np.random.Generator:
        return self._stream(_LABELS)

    def child(self, index: int) -> "RandomSource":
        """Independent source for a sub-experiment (e.g. one sampled phase)."""
        return RandomSource(self.seed, None, self._key + (99, int(index)))

    def __repr__(self) -> str:
        return f"RandomSource(seed={self.seed}, key={self._key})"


def as_source(rng) -> RandomSource:
    """Accept a RandomSource, an int seed or None (seed 0)."""
    if isinstance(rng, RandomSource):
        return rng
    if rng is None:
        return RandomSource(0)
    if isinstance(rng, (int, np.integer)):
        return RandomSource(int(rng))
    raise TypeError(f"cannot build a RandomSource from {type(rng).__name__}")
