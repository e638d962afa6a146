"""Deterministic RNG substreams.

All randomness in the package flows from integer master seeds through named
substreams, so that samples, restarts and commands can be regenerated
independently and in parallel without sharing stream state.
"""

from __future__ import annotations

import numpy as np

# fixed substream tags (part of the on-disk reproducibility contract)
STREAM_SAMPLES = 11
STREAM_SPLIT = 12
STREAM_MLP_INIT = 13
STREAM_OPTIM = 14
STREAM_APPLICATION = 15
STREAM_VALIDATION = 16


def substream(*key: int) -> np.random.Generator:
    """Independent generator for an integer key path, e.g. (seed, tag, i)."""
    return np.random.default_rng(np.random.SeedSequence(tuple(int(k) for k in key)))


def derive_seed(*key: int) -> int:
    """Collapse a key path to a single integer seed (for APIs taking ints)."""
    return int(np.random.SeedSequence(tuple(int(k) for k in key)).generate_state(1)[0])
