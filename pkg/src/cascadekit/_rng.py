"""Counter-based deterministic randomness.

Draws are keyed by (seed, *tags) through blake2b, so any single draw is
stable no matter what order (or in how many threads) the surrounding code
asks for it. Python's hash() is salted per process and must not be used
here.
"""

from __future__ import annotations

import hashlib

_DENOM = float(1 << 53)


def _digest(seed: int, tags: tuple) -> bytes:
    key = ":".join([str(seed), *map(str, tags)]).encode("utf-8")
    return hashlib.blake2b(key, digest_size=16).digest()


def unit(seed: int, *tags) -> float:
    """A float in the open interval (0, 1), a pure function of (seed, tags)."""
    raw = int.from_bytes(_digest(seed, tags)[:8], "big") >> 11  # 53 bits
    return (raw + 0.5) / _DENOM


def integer(seed: int, n: int, *tags) -> int:
    """An int in [0, n), a pure function of (seed, tags)."""
    if n <= 0:
        raise ValueError("n must be positive")
    raw = int.from_bytes(_digest(seed, tags), "big")
    return raw % n


def choice_weighted(seed: int, weights, *tags) -> int:
    """Index drawn proportionally to non-negative weights."""
    total = float(sum(weights))
    u = unit(seed, *tags) * total
    acc = 0.0
    for i, w in enumerate(weights):
        acc += w
        if u < acc:
            return i
    return len(weights) - 1
