"""Stable seed derivation so every stage of a run is independently replayable."""
from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, *tags) -> int:
    """Derive a child seed from a master seed and a label path.

    Hash-based so the mapping is stable across platforms and numpy versions.
    """
    key = f"{int(master)}|" + "/".join(str(t) for t in tags)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(master: int, *tags) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *tags))
