"""
Named random sub-streams derived from one 64-bit experiment seed.

Every consumer asks for its own stream by name plus integer coordinates, e.g.
("init",), ("shuffle", client_id, round), ("partition",). Adding a new stream never
perturbs the numbers drawn by existing ones.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream_code(name: str) -> int:
    """Platform-stable integer for a stream name."""
    return zlib.crc32(name.encode("utf-8"))


def derive_seed_sequence(seed: int, name: str, *coords: int) -> np.random.SeedSequence:
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, stream_code(name)]
    entropy.extend(int(c) for c in coords)
    return np.random.SeedSequence(entropy)


def derive_rng(seed: int, name: str, *coords: int) -> np.random.Generator:
    """Generator for stream `name` at the given coordinates."""
    return np.random.default_rng(derive_seed_sequence(seed, name, *coords))
