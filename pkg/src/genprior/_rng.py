"""Seeded random streams.

Every random object is drawn from a Philox (counter-based) generator keyed by
``(seed, *stream)``.  Two calls with the same key return identical draws no
matter which process or thread makes them.
"""
from __future__ import annotations

import hashlib

import numpy as np

# stream identifiers
NETWORK = 1
ENSEMBLE = 2
LATENT = 3
TIE_BREAK = 4
PROBES = 5
INIT = 6
SUBSPACE = 7

_MAX_SEED = 2**64


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed < _MAX_SEED:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=check_seed(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from a tuple of integers/strings.

    ``blake2b`` over the colon-joined decimal representation, first eight
    digest bytes read little-endian.
    """
    text = ":".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")
