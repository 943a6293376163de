"""Deterministic random-stream derivation.

Every experiment derives all of its randomness from one root seed through
named substreams, so that (root seed, substream name) -> bit stream is a
pure function.  Names are hashed to 32-bit spawn keys; integers pass
through unchanged, which is how per-repeat streams are derived.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["substream", "derive_rng"]

_KEY_MASK = 0xFFFFFFFF


def _key(part: str | int) -> int:
    if isinstance(part, bool):
        raise TypeError("bool is not a valid substream key")
    if isinstance(part, int):
        if part < 0:
            raise ValueError("integer substream keys must be non-negative")
        return part & _KEY_MASK
    return zlib.crc32(part.encode("utf-8")) & _KEY_MASK


def substream(root_seed: int, *parts: str | int) -> np.random.SeedSequence:
    """SeedSequence for the named substream of ``root_seed``.

    ``substream(s)`` is the root stream itself; extra parts select
    independent children, e.g. ``substream(s, "market", repeat_index)``.
    """
    return np.random.SeedSequence(entropy=root_seed, spawn_key=tuple(_key(p) for p in parts))


def derive_rng(root_seed: int, *parts: str | int) -> np.random.Generator:
    """Generator seeded from the named substream."""
    return np.random.default_rng(substream(root_seed, *parts))
