"""Deterministic derivation of child RNG streams from a master seed.

Child seed = first 8 bytes (little endian) of SHA-256 over the string
``"{master}|{purpose}|{index}"``.  The topology (master, purpose, index) is
what other implementations should reproduce; the bit-exact stream contents
are specific to numpy's PCG64.
"""

from __future__ import annotations

import hashlib

import numpy as np


def child_seed(master: int, purpose: str, index: int = 0) -> int:
    digest = hashlib.sha256(f"{master}|{purpose}|{index}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(master: int, purpose: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(child_seed(master, purpose, index))
