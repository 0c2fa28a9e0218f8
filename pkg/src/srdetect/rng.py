"""Counter-keyed SplitMix64 streams shared by both kernel backends.

Every replication owns a stream keyed by ``(seed, stream, index)`` so results do
not depend on the order in which replications are executed. The compiled
kernels implement the same arithmetic; the two backends produce bit-identical
draws.
"""
from __future__ import annotations

import math

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15
TWO_PI = 6.283185307179586
_INV_2_53 = 1.0 / 9007199254740992.0

# stream identifiers used by the estimators
PRE = 1
POST = 2
INIT = 3
CYCLIC = 4
WALK = 5
SERIES = 6
BAYES = 7
PATH = 8
INIT_OFFSET = 1000


def mix64(x: int) -> int:
    z = (x + GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def stream_key(seed: int, stream: int, index: int) -> int:
    return mix64(mix64(mix64(seed & MASK64) ^ (stream & MASK64)) ^ (index & MASK64))


class Stream:
    """Seedable scalar random stream.

    >>> s = Stream(7, 1, 0)
    >>> 0.0 <= s.uniform() < 1.0
    True
    """

    __slots__ = ("state", "has_spare", "spare")

    def __init__(self, seed: int, stream: int = 0, index: int = 0):
        self.state = stream_key(seed, stream, index)
        self.has_spare = False
        self.spare = 0.0

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def uniform(self) -> float:
        """Uniform on [0, 1)."""
        return (self.next_u64() >> 11) * _INV_2_53

    def uniform_pos(self) -> float:
        """Uniform on (0, 1]."""
        return 1.0 - self.uniform()

    def normal(self) -> float:
        if self.has_spare:
            self.has_spare = False
            return self.spare
        u1 = self.uniform_pos()
        u2 = self.uniform()
        rad = math.sqrt(-2.0 * math.log(u1))
        self.spare = rad * math.sin(TWO_PI * u2)
        self.has_spare = True
        return rad * math.cos(TWO_PI * u2)

    def exponential(self) -> float:
        return -math.log(self.uniform_pos())
