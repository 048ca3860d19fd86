"""Seed plumbing: every random stream is derived from explicit integer words."""

from __future__ import annotations

import hashlib

import numpy as np


def seed_words(seed) -> list[int]:
    """Flatten an int, a sequence of ints (nested) or a string into non-negative ints."""
    if seed is None:
        raise ValueError("an explicit seed is required")
    if isinstance(seed, (str, bytes)):
        raw = seed.encode() if isinstance(seed, str) else seed
        return [int.from_bytes(hashlib.sha256(raw).digest()[:8], "big")]
    if isinstance(seed, (int, np.integer)):
        value = int(seed)
        if value < 0:
            raise ValueError("seeds must be non-negative")
        return [value]
    out = []
    for part in seed:
        out.extend(seed_words(part))
    return out


def rng_for(*parts) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed_words(parts)))


def derive_bytes(*parts) -> bytes:
    """32 bytes that depend on ``parts`` only (used for protocol seeds)."""
    h = hashlib.sha256()
    for w in seed_words(parts):
        h.update(w.to_bytes((w.bit_length() + 8) // 8, "big") + b"|")
    return h.digest()
