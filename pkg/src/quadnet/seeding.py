"""Forking one root seed into independent, named random streams."""

from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part)


def fork_seed(seed: int, *path) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(p) for p in path))


def fork_rng(seed: int, *path) -> np.random.Generator:
    """``fork_rng(7, "sampler", 3)`` always yields the same stream, distinct from other paths."""
    return np.random.default_rng(fork_seed(seed, *path))


def derive_int(seed: int, *path) -> int:
    return int(fork_seed(seed, *path).generate_state(1, dtype=np.uint32)[0])
