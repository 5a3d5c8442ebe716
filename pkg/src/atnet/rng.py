"""Seeded random streams with a documented child-stream derivation.

Every stochastic component of the pipeline draws from a :class:`SeededRng`.
Parallel or per-item work never shares a stream; it forks children whose
seeds are a fixed hash of (parent seed, path), so results are independent
of execution order and stable across runs and platforms for a given numpy
version.
"""

import hashlib

import numpy as np

_DOMAIN = b"atnet.rng.v1"
_SEED_LIMIT = 2**64


def derive_seed(seed: int, *parts) -> int:
    """Derive a child seed as a hash of the parent seed and a path.

    ``parts`` may mix ints and strings.  The hash is SHA-256 over a fixed
    encoding, truncated to 64 bits.
    """
    h = hashlib.sha256()
    h.update(_DOMAIN)
    h.update(int(seed).to_bytes(8, "little"))
    for part in parts:
        if isinstance(part, (int, np.integer)):
            h.update(b"i")
            h.update(int(part).to_bytes(8, "little"))
        elif isinstance(part, str):
            raw = part.encode("utf-8")
            h.update(b"s")
            h.update(len(raw).to_bytes(4, "little"))
            h.update(raw)
        else:
            raise TypeError(f"seed path parts must be int or str, got {type(part).__name__}")
    return int.from_bytes(h.digest()[:8], "little")


class SeededRng:
    """Deterministic random stream (PCG64).

    Instances are single-owner: never share one across concurrent tasks.
    Fork independent children with :meth:`child` instead.
    """

    def __init__(self, seed: int):
        seed = int(seed)
        if not 0 <= seed < _SEED_LIMIT:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        self.seed = seed
        self._gen = np.random.Generator(np.random.PCG64(seed))

    def child(self, *parts) -> "SeededRng":
        """Fork an independent stream; child seed = hash(parent seed, parts)."""
        return SeededRng(derive_seed(self.seed, *parts))

    def random(self, size=None):
        return self._gen.random(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int):
        return self._gen.permutation(n)

    def __repr__(self):
        return f"SeededRng(seed={self.seed})"
