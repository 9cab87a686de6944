"""Counter-based pseudorandom primitives (splitmix64, version 1).

All stochastic pieces of the toolkit (phantom noise, 2D augmentation draws)
derive their randomness from the splitmix64 finalizer applied to
``seed + counter * GOLDEN``.  Counter-based draws have no shared generator
state, so parallel generation over counters is reproducible by construction
and every language with 64-bit unsigned arithmetic can replay the streams
bit-for-bit.

Algorithm (Steele, Lea & Flood's SplitMix64 finalizer):

    z  = (seed + counter * 0x9E3779B97F4A7C15) mod 2^64
    z ^= z >> 30;  z = z * 0xBF58476D1CE4E5B9 mod 2^64
    z ^= z >> 27;  z = z * 0x94D049BB133111EB mod 2^64
    z ^= z >> 31
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def mix64(seed: int, counter: int) -> int:
    """64-bit hash of (seed, counter); the toolkit's one source of randomness."""
    z = (seed + counter * GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * _M1) & _MASK
    z = ((z ^ (z >> 27)) * _M2) & _MASK
    return z ^ (z >> 31)


def mix64_array(seed: int, counters: np.ndarray) -> np.ndarray:
    """Vectorized mix64 over an array of counters (dtype uint64 out)."""
    with np.errstate(over="ignore"):
        z = (np.uint64(seed & _MASK) + counters.astype(np.uint64) * np.uint64(GOLDEN))
        z ^= z >> np.uint64(30)
        z *= np.uint64(_M1)
        z ^= z >> np.uint64(27)
        z *= np.uint64(_M2)
        z ^= z >> np.uint64(31)
    return z


def unit_double(u: int) -> float:
    """Map a 64-bit word to a double in [0, 1) using the top 53 bits."""
    return (u >> 11) * (2.0 ** -53)
