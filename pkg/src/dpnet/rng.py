"""Deterministic 64-bit linear congruential generator.

Every random draw in the package (weight initialization, random CLI
inputs, gradient-check cotangents) flows through this generator so that
outputs are bit-reproducible across runs and platforms.  The recurrence
uses Knuth's MMIX constants:

    state' = state * 6364136223846793005 + 1442695040888963407  (mod 2**64)

The generator is seeded directly with the user seed (state = seed); each
draw advances the state once and then extracts bits.  A uniform double in
[0, 1) takes the top 53 bits: (state >> 11) * 2**-53.
"""

from __future__ import annotations

import numpy as np

MULTIPLIER = 6364136223846793005
INCREMENT = 1442695040888963407
_MASK = (1 << 64) - 1
_CHUNK = 4096
_INV_2_53 = 2.0**-53


class Lcg64:
    """Sequential 64-bit LCG with vectorized bulk generation."""

    def __init__(self, seed: int):
        self._state = int(seed) & _MASK
        # Per-offset jump coefficients: state_{k+j} = A[j] * state_k + C[j].
        a, c = 1, 0
        aj = np.empty(_CHUNK, dtype=np.uint64)
        cj = np.empty(_CHUNK, dtype=np.uint64)
        for j in range(_CHUNK):
            a = (a * MULTIPLIER) & _MASK
            c = (c * MULTIPLIER + INCREMENT) & _MASK
            aj[j] = a
            cj[j] = c
        self._jump_mult = aj
        self._jump_inc = cj

    def next_u64(self) -> int:
        self._state = (self._state * MULTIPLIER + INCREMENT) & _MASK
        return self._state

    def next_double(self) -> float:
        return (self.next_u64() >> 11) * _INV_2_53

    def fill_u64(self, n: int) -> np.ndarray:
        """Return the next ``n`` raw states as a uint64 array."""
        out = np.empty(n, dtype=np.uint64)
        pos = 0
        while pos < n:
            m = min(_CHUNK, n - pos)
            s = np.uint64(self._state)
            states = self._jump_mult[:m] * s + self._jump_inc[:m]
            out[pos : pos + m] = states
            self._state = int(states[-1])
            pos += m
        return out

    def uniform(self, shape=(), low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """Uniform doubles in [low, high) with the given shape."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        bits = self.fill_u64(n) >> np.uint64(11)
        u = bits.astype(np.float64) * _INV_2_53
        out = low + (high - low) * u
        return out.reshape(shape)
