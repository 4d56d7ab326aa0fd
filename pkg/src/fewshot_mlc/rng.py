"""Deterministic random number generation.

Corpus synthesis, support-set sampling, toy embeddings, and weight
initialization all have to replay byte-identically across runs,
platforms, and interpreter versions.  The stdlib ``random`` module only
guarantees stability of ``random()`` itself (shuffle/sample may change
between Python releases), and numpy's bit generators carry a similar
caveat, so all randomness in this package is drawn from the small
fixed-specification generator below.

Stream specification (all arithmetic on 64-bit unsigned integers,
wrapping):

* state update and output (splitmix64)::

      state = (state + 0x9E3779B97F4A7C15) mod 2^64
      z = state
      z = ((z XOR (z >> 30)) * 0xBF58476D1CE4E5B9) mod 2^64
      z = ((z XOR (z >> 27)) * 0x94D049BB133111EB) mod 2^64
      output = z XOR (z >> 31)

* uniform doubles in [0, 1): top 53 bits of the output, scaled by 2^-53
* string hashing (`hash64`): FNV-1a over the UTF-8 bytes of the string
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def hash64(text: str) -> int:
    """64-bit FNV-1a hash of a string's UTF-8 bytes."""
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def derive_seed(seed: int, *parts: str) -> int:
    """Fold string labels into a seed to get an independent child stream."""
    out = seed & _MASK64
    for part in parts:
        out = (out * 0x9E3779B97F4A7C15 + hash64(part)) & _MASK64
    return out


class Rng:
    """splitmix64 stream with the handful of draws the package needs."""

    __slots__ = ("_state",)

    def __init__(self, seed: int) -> None:
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def random(self) -> float:
        """Uniform double in [0, 1)."""
        return (self.next_u64() >> 11) * 2.0**-53

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n), rejection-sampled to avoid modulo bias."""
        if n <= 0:
            raise ValueError("randint bound must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            z = self.next_u64()
            if z < limit:
                return z % n

    def bernoulli(self, p: float) -> bool:
        return self.random() < p

    def choice(self, seq):
        if not seq:
            raise ValueError("cannot choose from an empty sequence")
        return seq[self.randint(len(seq))]

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample(self, seq, k: int) -> list:
        """k distinct items, via partial Fisher-Yates over a copy."""
        if k < 0 or k > len(seq):
            raise ValueError(f"sample size {k} out of range for {len(seq)} items")
        pool = list(seq)
        for i in range(k):
            j = i + self.randint(len(pool) - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]
