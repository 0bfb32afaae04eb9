"""Deterministic seed derivation that never mutates its inputs."""

from __future__ import annotations

import hashlib

import numpy as np


def as_seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def child(seed, *keys: int) -> np.random.SeedSequence:
    """Child sequence addressed by ``keys``; unlike ``spawn`` it is stateless."""
    ss = as_seed_sequence(seed)
    return np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + tuple(keys))


def stable_hash(*parts) -> int:
    """64-bit integer digest of the parts' string forms, stable across processes."""
    text = "\x1f".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")
