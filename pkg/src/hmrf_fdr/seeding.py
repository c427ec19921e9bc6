"""Reproducible RNG stream derivation.

All randomness in the package flows through counter-based Philox generators
keyed by ``(master_seed, spawn_key)``. A spawn key is a tuple of small
integers ``(purpose, *indices)``; the purpose codes below are stable, so any
(seed, purpose, indices) triple maps to the same stream on every platform,
worker count, and run.
"""

import zlib

import numpy as np

# purpose codes for derived streams
PRIOR_CHAIN = 1
POSTERIOR_CHAIN = 2
FINAL_CHAIN = 3
TRUTH_FIELD = 4
EMISSION = 5
GEM = 6
ORACLE_CHAIN = 7
ANALYZE = 8


def rng_from_key(seed: int, *key: int) -> np.random.Generator:
    """Return a Philox generator for the sub-stream identified by ``key``."""
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def stable_label_code(label: str) -> int:
    """Deterministic 32-bit code for a string label (CRC-32)."""
    return zlib.crc32(label.encode("utf-8"))
