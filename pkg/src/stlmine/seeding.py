"""Deterministic RNG derivation.

All randomness in a run flows from one integer seed. Independent streams are
derived by passing the seed plus small integer component ids through numpy's
SeedSequence, so any sub-computation can be reproduced in isolation.
"""
from __future__ import annotations

import numpy as np


def derive_rng(*components: int) -> np.random.Generator:
    """A generator keyed by an ordered tuple of integers."""
    return np.random.default_rng([int(c) for c in components])
