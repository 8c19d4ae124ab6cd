"""
Counter-based random streams keyed by integers and sample ids.

Every stream is a Philox generator whose key is derived from
(seed, sample id, step, ...), so draws for one sample never depend on the
order in which other samples are produced.
"""
import hashlib

import numpy as np


def id_words(value) -> list:
    """
    Turn a seed component into 32-bit words for ``np.random.SeedSequence``.
    Integers map to themselves, strings to the first 8 bytes of their sha256.
    """
    if isinstance(value, (int, np.integer)):
        value = int(value)
        if value < 0:
            raise ValueError(f"seed components must be non-negative, got {value}")
        return [value]
    digest = hashlib.sha256(str(value).encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in (0, 4)]


def philox(*components) -> np.random.Generator:
    """Generator keyed by all ``components`` (ints or strings)."""
    words = []
    for c in components:
        words.extend(id_words(c))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))
