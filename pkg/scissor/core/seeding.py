"""
Named random streams.

Every stochastic step draws from a numpy Generator whose SeedSequence entropy is the
master seed followed by a list of keys. String keys are folded to 64-bit integers with
sha256, integer keys are used as counters, so stream ``(seed, "generate", 7)`` is the
same no matter how many other streams were opened before it.
"""

import hashlib
from typing import Union

import numpy as np

Key = Union[int, str]

_MASK64 = (1 << 64) - 1


def key_to_int(key: Key) -> int:
    if isinstance(key, (bool, np.bool_)):
        return int(key)
    if isinstance(key, (int, np.integer)):
        return int(key) & _MASK64
    digest = hashlib.sha256(str(key).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def stream(seed: int, *keys: Key) -> np.random.Generator:
    """Return the generator for ``seed`` refined by ``keys``."""
    entropy = [key_to_int(seed)] + [key_to_int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derive_seed(seed: int, *keys: Key) -> int:
    """Derive a 63-bit child seed, for handing to code that wants a plain integer."""
    return int(stream(seed, *keys).integers(0, 2**63 - 1))
