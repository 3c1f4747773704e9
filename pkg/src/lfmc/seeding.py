"""Seed derivation.

Every random stream in the package is derived from a single root seed as
``SeedSequence(root, spawn_key=(crc32(tag), index))``.  A component asks for
its own stream by tag ("terrain", "command", "init", ...) and an integer index
(iteration, rollout number), so streams are independent of call order and of
how rollouts are split across workers.
"""

import zlib

import numpy as np


def tag_key(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def seed_sequence(root: int, tag: str, *index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(root), spawn_key=(tag_key(tag),) + tuple(int(i) for i in index))


def rng_for(root: int, tag: str, *index: int) -> np.random.Generator:
    """Generator for stream ``(root, tag, *index)``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(root, tag, *index)))


def int_seed(root: int, tag: str, *index: int) -> int:
    """A 32-bit integer seed for stream ``(root, tag, *index)``."""
    return int(seed_sequence(root, tag, *index).generate_state(1)[0])
