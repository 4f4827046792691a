"""Named, reproducible RNG streams derived from a single master seed.

Every stochastic component draws from a stream addressed by a tuple of
labels (strings and integers).  Streams are independent of each other and
of the order in which they are created, so parallel execution over
references/repetitions cannot change results.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _entropy_word(part) -> int:
    if isinstance(part, (bool, float)):
        raise TypeError(f"stream labels must be int or str, got {type(part)!r}")
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFFFFFFFFFF
    if isinstance(part, str):
        digest = hashlib.sha256(part.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little")
    raise TypeError(f"stream labels must be int or str, got {type(part)!r}")


def seed_for(master_seed: int, *parts) -> np.random.SeedSequence:
    """SeedSequence for the stream named by ``parts`` under ``master_seed``."""
    entropy = [_entropy_word(master_seed)]
    entropy.extend(_entropy_word(p) for p in parts)
    return np.random.SeedSequence(entropy)


def stream(master_seed: int, *parts) -> np.random.Generator:
    """Fresh generator for the named stream; same name, same draws."""
    return np.random.default_rng(seed_for(master_seed, *parts))
