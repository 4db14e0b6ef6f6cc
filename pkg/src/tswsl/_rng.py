"""Seeded random streams.

Every random draw in the package comes from a generator keyed by a tuple of
non-negative integers, so that e.g. tree system ``l`` of an estimator is the
same no matter how many other trees are sampled or in which order.
"""

from __future__ import annotations

import hashlib
from typing import Sequence, Union

import numpy as np

SeedLike = Union[int, Sequence[int]]

# sub-stream labels appended to a key
DIRECTIONS = 0
POSITIONS = 1
SPLITTING = 2
INIT = 3


def as_key(seed: SeedLike) -> tuple[int, ...]:
    if isinstance(seed, (int, np.integer)):
        key = (int(seed),)
    else:
        key = tuple(int(s) for s in seed)
    if not key or any(s < 0 for s in key):
        raise ValueError(f"seed must be a non-negative int or tuple of them, got {seed!r}")
    return key


def stream(seed: SeedLike, *labels: int) -> np.random.Generator:
    return np.random.default_rng([*as_key(seed), *labels])


def derive_seed(seed: int, label: str) -> int:
    """Hash a master seed and a subsystem label into an independent 63-bit seed."""
    digest = hashlib.blake2b(f"{int(seed)}:{label}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


def uniform_directions(rng: np.random.Generator, count: int, d: int) -> np.ndarray:
    """``count`` i.i.d. uniform unit vectors in R^d (normalised Gaussians)."""
    g = rng.standard_normal((count, d))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    # a zero Gaussian draw has probability zero; redraw rather than divide by 0
    while np.any(norms == 0):
        bad = norms[:, 0] == 0
        g[bad] = rng.standard_normal((int(bad.sum()), d))
        norms = np.linalg.norm(g, axis=1, keepdims=True)
    return g / norms
