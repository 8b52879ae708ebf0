"""Deterministic named random substreams.

Every run hangs off a single integer seed; each consumer (generator init,
batch shuffling, corruption, ...) derives its own stream by name so that
toggling one component never perturbs another's randomness.
"""
from __future__ import annotations

import hashlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Return an independent Generator derived from (seed, name)."""
    digest = hashlib.sha256(f"{seed}/{name}".encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))
