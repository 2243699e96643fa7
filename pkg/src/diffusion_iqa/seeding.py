"""Deterministic RNG derivation from a base seed plus string labels.

Every stochastic component takes an explicit :class:`numpy.random.Generator`.
Deriving child generators from ``(base_seed, label, ...)`` keeps results
independent of iteration order: the generator for image ``x`` is the same
whether ``x`` is processed first or last.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["derive_rng", "derive_seed_sequence"]


def derive_seed_sequence(base_seed: int, *labels) -> np.random.SeedSequence:
    entropy = [int(base_seed)] + [zlib.crc32(str(label).encode("utf-8")) for label in labels]
    return np.random.SeedSequence(entropy)


def derive_rng(base_seed: int, *labels) -> np.random.Generator:
    """Child generator keyed by the base seed and the given labels."""
    return np.random.default_rng(derive_seed_sequence(base_seed, *labels))
