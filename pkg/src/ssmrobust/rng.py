"""Seeded random number generation.

All randomness in the library flows through Philox (a 64-bit counter-based
generator), so seeded results are identical across platforms and across any
internal parallelism. Subsystem seeds are derived from a global seed by
hashing a label, which keeps streams independent without manual bookkeeping.
"""

import hashlib

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    """Create the library-wide generator for an integer seed."""
    return np.random.Generator(np.random.Philox(key=int(seed) & (2**64 - 1)))


def derive_seed(base_seed: int, *labels) -> int:
    """Derive a stable 63-bit subsystem seed from a base seed and labels."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(base_seed)).encode())
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode())
    return int.from_bytes(h.digest(), "little") & (2**63 - 1)
