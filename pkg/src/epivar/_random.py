"""Seeded random streams.

All randomness flows through numpy's Philox counter-based bit generator,
keyed by a ``SeedSequence`` built from the integer seed plus an optional
spawn key. Philox output is specified by its algorithm, so a given
``(seed, key)`` produces the same stream on every platform and numpy
release that ships it.
"""
import numpy as np


def rng(seed, *key):
    """Return a Philox-backed Generator for ``seed`` and sub-stream ``key``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed, *key):
    """Deterministic 63-bit child seed for sub-stream ``key`` of ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    hi, lo = ss.generate_state(2, dtype=np.uint32)
    return int(((int(hi) & 0x7FFFFFFF) << 32) | int(lo))
