"""Single randomness source for the pipeline.

Production default draws from OS entropy; tests pass a seed to make every
artifact byte-reproducible. All library code that needs randomness takes an
Rng instance instead of touching global state.
"""

from __future__ import annotations

import random
from typing import Optional


class Rng:
    def __init__(self, seed: Optional[int] = None):
        self.seeded = seed is not None
        self._r = random.Random(seed) if seed is not None else random.SystemRandom()

    def randbelow(self, n: int) -> int:
        return self._r.randrange(n)

    def randbits(self, k: int) -> int:
        return self._r.getrandbits(k)

    def randbytes(self, k: int) -> bytes:
        return self._r.getrandbits(8 * k).to_bytes(k, "little") if k else b""

    def shuffle(self, seq) -> None:
        self._r.shuffle(seq)

    def choice(self, seq):
        return self._r.choice(seq)
