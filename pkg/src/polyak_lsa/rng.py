"""Seeded random streams.

Every random draw in the package comes from a :class:`Streams` pair built
from a base seed and an integer key path. The key path is hashed into the
PCG64 state by :class:`numpy.random.SeedSequence` (``spawn_key``), so

    replicate i of a study seeded with s  ->  SeedSequence(s, spawn_key=(i,))

and the A-noise and b-noise generators of that replicate hang off the
children ``(i, 0)`` and ``(i, 1)``. Two streams with different key paths
are statistically independent; equal key paths reproduce bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Streams", "make_streams", "replicate_streams", "generator"]


@dataclass(frozen=True)
class Streams:
    """Independent generators for the matrix noise and the vector noise."""

    a: np.random.Generator
    b: np.random.Generator


def _seq(seed: int, key: tuple[int, ...]) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=key)


def generator(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(_seq(seed, tuple(key))))


def make_streams(seed: int, *key: int) -> Streams:
    return Streams(a=generator(seed, *key, 0), b=generator(seed, *key, 1))


def replicate_streams(seed: int, index: int) -> Streams:
    return make_streams(seed, int(index))
