"""Keyed counter-based random streams.

Every random draw in the package comes from a generator keyed by
``(seed, purpose, *index)``.  Streams with different keys are independent and
a stream's content never depends on how many other streams were consumed, so
serial and parallel runs see identical numbers.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _tag_to_int(tag: str) -> int:
    return int.from_bytes(hashlib.blake2b(tag.encode(), digest_size=8).digest(), "little")


def stream_key(seed: int, tag: str, *index: int) -> list[int]:
    return [int(seed) & 0xFFFFFFFFFFFFFFFF, _tag_to_int(tag), *(int(i) for i in index)]


def keyed_rng(seed: int, tag: str, *index: int) -> np.random.Generator:
    """Return an independent Philox generator for ``(seed, tag, *index)``."""
    ss = np.random.SeedSequence(stream_key(seed, tag, *index))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, tag: str, *index: int) -> int:
    """Collapse a key into a fresh 63-bit integer seed."""
    ss = np.random.SeedSequence(stream_key(seed, tag, *index))
    return int(ss.generate_state(1, dtype=np.uint64)[0]) & (2**63 - 1)
