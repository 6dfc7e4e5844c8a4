"""Reproducible random streams.

Every trial gets its own generator derived from (master seed, experiment tag,
trial index), so results do not depend on the order in which trials run.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _tag_words(tag: str) -> list[int]:
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


def trial_seed_sequence(master_seed: int, tag: str, index: int) -> np.random.SeedSequence:
    if master_seed < 0 or index < 0:
        raise ValueError("seeds and trial indices must be non-negative")
    entropy = [master_seed & 0xFFFFFFFF, master_seed >> 32, *_tag_words(tag), index]
    return np.random.SeedSequence(entropy)


def trial_rng(master_seed: int, tag: str, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(trial_seed_sequence(master_seed, tag, index)))


def as_rng(rng=None) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def split(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Independent child streams; drawing from one never shifts another."""
    return rng.spawn(n)
