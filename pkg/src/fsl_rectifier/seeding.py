"""Deterministic seed derivation.

Every stochastic component takes an explicit integer seed. Sub-seeds are
derived by hashing the parent seed together with string/int context parts,
so independent consumers (pool sampling, toy image synthesis, episode
streams) never share or collide streams by accident.
"""

import hashlib

import numpy as np

_MASK63 = (1 << 63) - 1


def derive_seed(*parts: int | str) -> int:
    """Derive a stable 63-bit seed from arbitrary context parts."""
    h = hashlib.sha256()
    for part in parts:
        h.update(repr(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest()[:8], "big") & _MASK63


def rng_for(*parts: int | str) -> np.random.Generator:
    """A fresh numpy generator for the given context."""
    return np.random.Generator(np.random.PCG64(derive_seed(*parts)))
