"""Deterministic pseudo-randomness shared by every stage of the pipeline.

The generator is SplitMix64 (Steele, Lea & Flood's mixer, the one used to
seed xoshiro/xoroshiro): a 64-bit counter advanced by the golden-ratio
increment 0x9E3779B97F4A7C15 and finalized with two xor-shift multiplies
(0xBF58476D1CE4E9B5, 0x94D049BB133111EB).  It is tiny, has no hidden
state beyond one integer, and produces identical streams on every
platform, which is what makes subsampling, shuffling, and decoding
bit-reproducible.

Stage seeds are derived from one global seed plus a text label
(``derive_seed(seed, "subsample")`` etc.) so stages can be re-seeded
independently without correlating their streams.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E9B5
_MIX2 = 0x94D049BB133111EB

# FNV-1a 64-bit constants, used only to fold label bytes into a seed.
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _mix(z: int) -> int:
    z = (z ^ (z >> 30)) * _MIX1 & _MASK64
    z = (z ^ (z >> 27)) * _MIX2 & _MASK64
    return z ^ (z >> 31)


class SplitMix64:
    """64-bit PRNG with one word of state and a fixed, documented stream."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_uint64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        return _mix(self._state)

    def next_float(self) -> float:
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_uint64() >> 11) * (1.0 / (1 << 53))

    def next_below(self, n: int) -> int:
        """Uniform integer in [0, n) via 128-bit multiply-shift.

        The residual bias is n / 2**64, far below anything observable here.
        """
        if n <= 0:
            raise ValueError(f"bound must be positive, got {n}")
        return (self.next_uint64() * n) >> 64

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_below(i + 1)
            items[i], items[j] = items[j], items[i]


def derive_seed(seed: int, label: str) -> int:
    """Child seed for a named stage: FNV-1a of the label folded into the seed.

    Same (seed, label) always gives the same child; distinct labels give
    uncorrelated streams.
    """
    h = _FNV_OFFSET
    for byte in label.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return _mix((seed ^ h) & _MASK64)


def sample_indices(n: int, k: int, seed: int) -> list[int]:
    """k distinct indices drawn uniformly from range(n), returned ascending.

    Partial Fisher-Yates over the index array: position i swaps with a
    uniform position in [i, n), the first k positions are the draw.
    Sorting restores input order so callers get a stable subsequence.
    """
    if not 0 <= k <= n:
        raise ValueError(f"cannot draw {k} indices from {n}")
    rng = SplitMix64(seed)
    indices = list(range(n))
    for i in range(k):
        j = i + rng.next_below(n - i)
        indices[i], indices[j] = indices[j], indices[i]
    return sorted(indices[:k])
