"""Seeded random streams.

Every stream is PCG64 (numpy's ``PCG64`` bit generator, XSL-RR 128/64) seeded
through ``numpy.random.SeedSequence(entropy=seed, spawn_key=path)``.  A path is
a tuple of non-negative integers; string components are mapped to the first
four bytes (big-endian) of their SHA-256.  All derived draws are computed here
from the raw 64-bit words, never through numpy's distribution methods, so a
stream is bit-reproducible for a given (seed, path):

* ``below(n)``: rejection sampling, reject ``x >= 2**64 - (2**64 % n)``, return ``x % n``.
* ``random()``: ``(x >> 11) * 2**-53``.
* ``bits(k)``: the top ``k`` bits of one word.
"""

from __future__ import annotations

import copy
import hashlib

import numpy as np

_TWO64 = 1 << 64
_BATCH = 64


def _key_part(part) -> int:
    if isinstance(part, str):
        return int.from_bytes(hashlib.sha256(part.encode()).digest()[:4], "big")
    part = int(part)
    if part < 0:
        raise ValueError("stream path components must be non-negative")
    return part


class Stream:
    """A named, splittable stream of 64-bit words."""

    __slots__ = ("seed", "path", "_bitgen", "_buf", "_pos")

    def __init__(self, seed: int, *path):
        self.seed = int(seed)
        self.path = tuple(_key_part(p) for p in path)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        self._bitgen = np.random.PCG64(ss)
        self._buf: list[int] = []
        self._pos = 0

    def child(self, *path) -> "Stream":
        return Stream(self.seed, *self.path, *path)

    def copy(self) -> "Stream":
        return copy.deepcopy(self)

    def __deepcopy__(self, memo):
        dup = Stream.__new__(Stream)
        dup.seed = self.seed
        dup.path = self.path
        dup._bitgen = np.random.PCG64()
        dup._bitgen.state = self._bitgen.state
        dup._buf = list(self._buf)
        dup._pos = self._pos
        return dup

    def next_u64(self) -> int:
        if self._pos >= len(self._buf):
            self._buf = self._bitgen.random_raw(_BATCH).tolist()
            self._pos = 0
        x = self._buf[self._pos]
        self._pos += 1
        return x

    def bits(self, k: int) -> int:
        return self.next_u64() >> (64 - k)

    def below(self, n: int) -> int:
        if n <= 0:
            raise ValueError("n must be positive")
        limit = _TWO64 - (_TWO64 % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def sample(self, n: int, k: int) -> list[int]:
        """k distinct integers from range(n), uniformly, via partial Fisher-Yates."""
        if not 0 <= k <= n:
            raise ValueError("need 0 <= k <= n")
        pool: dict[int, int] = {}
        out = []
        for i in range(k):
            j = i + self.below(n - i)
            out.append(pool.get(j, j))
            pool[j] = pool.get(i, i)
        return out

    def choice(self, seq):
        return seq[self.below(len(seq))]

    def __repr__(self):
        return f"Stream(seed={self.seed}, path={self.path})"
