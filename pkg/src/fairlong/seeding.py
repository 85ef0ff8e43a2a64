"""Keyed random-stream derivation from a single master seed."""

from __future__ import annotations

import hashlib

import numpy as np


def _key_int(key: str) -> int:
    return int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "little")


def derive_seed(master: int, *keys) -> int:
    """Deterministic 63-bit seed for the named substream ``keys`` of ``master``."""
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=tuple(_key_int(str(k)) for k in keys))
    return int(ss.generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))


def derive_rng(master: int, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *keys))
