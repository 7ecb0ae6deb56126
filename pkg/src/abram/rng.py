"""Counter-based random streams.

Every stochastic object in the package draws from a Philox stream keyed by
``(seed, stream_id)``.  Stream ``i`` produces the same numbers no matter how
many other streams exist or how its draws are chunked, which is what makes the
coupled N-particle / reference-system construction and thread-count
independence possible.
"""
from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(seed: int, *tags: int) -> int:
    """Mix ``seed`` with integer tags into a new 64-bit seed."""
    ss = np.random.SeedSequence([int(seed) & _MASK64, *[int(t) & _MASK64 for t in tags]])
    return int(ss.generate_state(1, np.uint64)[0])


def stream(seed: int, stream_id: int) -> np.random.Generator:
    key = np.array([int(seed) & _MASK64, int(stream_id) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class NoiseSource:
    """Standard-normal increments for a fixed set of streams.

    ``draw(n)`` returns an array of shape ``(n, len(stream_ids), dim)`` whose
    column ``i`` comes from stream ``stream_ids[i]`` only.
    """

    def __init__(self, seed: int, stream_ids, dim: int):
        self.seed = int(seed)
        self.stream_ids = np.asarray(stream_ids, dtype=np.int64)
        self.dim = int(dim)
        self._gens = [stream(self.seed, s) for s in self.stream_ids]

    def __len__(self):
        return len(self._gens)

    def draw(self, n_steps: int) -> np.ndarray:
        out = np.empty((n_steps, len(self._gens), self.dim))
        for i, g in enumerate(self._gens):
            out[:, i, :] = g.standard_normal((n_steps, self.dim))
        return out

    def uniform(self, low: float, high: float) -> np.ndarray:
        """One uniform vector per stream, shape ``(len, dim)``."""
        return np.stack([g.uniform(low, high, self.dim) for g in self._gens])

    def generators(self):
        return list(self._gens)
