"""Pseudorandom QPSK vector from a 16-bit maximal-length LFSR.

Fibonacci register for x^16 + x^14 + x^13 + x^11 + 1; two output bits per chip.
"""

from __future__ import annotations

import math

import numpy as np

LFSR_DEGREE = 16
LFSR_PERIOD = (1 << LFSR_DEGREE) - 1


def seed_to_state(seed: int) -> int:
    """Any integer seed to a non-zero register state."""
    return int(seed) % LFSR_PERIOD + 1


def lfsr_step(state: int) -> tuple[int, int]:
    """Advance once; returns ``(output_bit, new_state)``."""
    out = state & 1
    fb = (state ^ (state >> 2) ^ (state >> 3) ^ (state >> 5)) & 1
    return out, (state >> 1) | (fb << (LFSR_DEGREE - 1))


def lfsr_bits(state: int, n: int) -> np.ndarray:
    bits = np.empty(n, dtype=np.uint8)
    for i in range(n):
        bits[i], state = lfsr_step(state)
    return bits


def prs_vector(seed: int, K: int) -> np.ndarray:
    """Length-K vector with entries ``(+-1 +- 1j)/sqrt(2)``."""
    if K < 1:
        raise ValueError("K must be positive")
    b = lfsr_bits(seed_to_state(seed), 2 * K).reshape(K, 2).astype(np.float64)
    return ((1 - 2 * b[:, 0]) + 1j * (1 - 2 * b[:, 1])) / math.sqrt(2.0)
