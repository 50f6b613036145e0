"""Keyed counter-based random streams.

Every random draw in a search is addressed by ``(seed, purpose, step, beam,
candidate)``.  The first four coordinates are hashed into a Philox key and
the candidate index selects a disjoint counter block, so a draw never
depends on how many draws happened before it or on which worker made it.
"""

from __future__ import annotations

import threading

import numpy as np

_MASK64 = (1 << 64) - 1

# purpose tags; part of the key so init and candidate noise never collide
INIT = 0
CANDIDATE = 1
AUX = 2

_local = threading.local()


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def philox_key(seed: int, *coords: int) -> tuple[int, int]:
    """Two 64-bit key words hashed from the seed and coordinates."""
    a, b = _splitmix64(int(seed) & _MASK64), _splitmix64(~int(seed) & _MASK64)
    for c in coords:
        c = int(c)
        if c < 0:
            raise ValueError(f"stream coordinates must be non-negative, got {c}")
        a = _splitmix64(a ^ c)
        b = _splitmix64(b ^ _splitmix64(c ^ a))
    return a, b


def _generator() -> tuple[np.random.Philox, np.random.Generator]:
    pair = getattr(_local, "pair", None)
    if pair is None:
        bg = np.random.Philox(0)
        pair = (bg, np.random.Generator(bg))
        _local.pair = pair
    return pair


def stream(seed: int, purpose: int, step: int, beam: int, candidate: int = 0) -> np.random.Generator:
    """Fresh generator positioned at the start of the addressed stream."""
    key = np.array(philox_key(seed, purpose, step, beam), dtype=np.uint64)
    counter = np.array([0, 0, int(candidate) & _MASK64, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=counter, key=key))


def normal(seed: int, coords: tuple[int, int, int, int], dim: int) -> np.ndarray:
    """Standard-normal vector of length ``dim`` for ``coords = (purpose, step, beam, candidate)``.

    Reuses a per-thread bit generator; only its state is reset.
    """
    purpose, step, beam, candidate = coords
    if candidate < 0:
        raise ValueError(f"stream coordinates must be non-negative, got {candidate}")
    bg, gen = _generator()
    bg.state = {
        "bit_generator": "Philox",
        "state": {
            "counter": np.array([0, 0, int(candidate), 0], dtype=np.uint64),
            "key": np.array(philox_key(seed, purpose, step, beam), dtype=np.uint64),
        },
        "buffer": np.zeros(4, dtype=np.uint64),
        "buffer_pos": 4,
        "has_uint32": 0,
        "uinteger": 0,
    }
    return gen.standard_normal(dim)
