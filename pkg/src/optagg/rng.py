"""Platform-independent pseudo random numbers.

Streams are xoshiro256** generators seeded through splitmix64.  Doubles use
the upper 53 bits of each 64-bit output; Gaussians use Box-Muller on pairs of
uniforms.  Parallel work derives child streams with :meth:`Rng.child` rather
than sharing one generator.
"""
import numpy as np
from numba import njit

from .errors import InvalidInput

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64_mix(z):
    """The splitmix64 finalizer applied to ``z + golden``, as a Python int."""
    z = (z + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _seed_state(seed):
    s = seed & _MASK64
    words = []
    for _ in range(4):
        words.append(splitmix64_mix(s))
        s = (s + _GOLDEN) & _MASK64
    return np.array(words, dtype=np.uint64)


@njit(cache=True)
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@njit(cache=True)
def _xoshiro_fill(s, out):
    for i in range(out.shape[0]):
        s0 = s[0]
        s1 = s[1]
        s2 = s[2]
        s3 = s[3]
        out[i] = _rotl(s1 * np.uint64(5), 7) * np.uint64(9)
        t = s1 << np.uint64(17)
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        s[0] = s0
        s[1] = s1
        s[2] = s2
        s[3] = s3


class Rng:
    """A single-owner random stream.

    Parameters
    ----------
    seed : int
        Unsigned 64-bit seed. Identical seeds give identical sequences.
    """

    def __init__(self, seed=0):
        if seed < 0:
            raise InvalidInput("seed must be non-negative")
        self.seed = int(seed) & _MASK64
        self._state = _seed_state(self.seed)
        self.position = 0

    def __repr__(self):
        return f"Rng(seed={self.seed}, position={self.position})"

    def child(self, *indices):
        """Independent stream for ``indices`` (a path of stream numbers).

        Depends only on this stream's seed, never on its position.
        """
        seed = self.seed
        for index in indices:
            seed = splitmix64_mix(seed ^ splitmix64_mix(int(index) & _MASK64))
        return Rng(seed)

    def next_u64(self, n):
        out = np.empty(int(n), dtype=np.uint64)
        _xoshiro_fill(self._state, out)
        self.position += out.shape[0]
        return out

    def random(self, n):
        """``n`` doubles in [0, 1)."""
        bits = self.next_u64(n) >> np.uint64(11)
        return bits.astype(np.float64) * (1.0 / 9007199254740992.0)

    def uniform(self, lo, hi, n):
        if not lo < hi:
            raise InvalidInput(f"uniform needs lo < hi, got [{lo}, {hi})")
        out = lo + (hi - lo) * self.random(n)
        # lo + (hi-lo)*u can round up to hi
        return np.minimum(out, np.nextafter(hi, lo))

    def normal(self, n, scale=1.0):
        n = int(n)
        pairs = (n + 1) // 2
        u = self.random(2 * pairs)
        r = np.sqrt(-2.0 * np.log1p(-u[0::2]))
        theta = 2.0 * np.pi * u[1::2]
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return scale * z[:n]

    def integers(self, high, n):
        """``n`` integers uniform on ``[0, high)``."""
        if high < 1:
            raise InvalidInput("integers needs high >= 1")
        idx = np.floor(self.random(n) * high).astype(np.int64)
        return np.minimum(idx, high - 1)

    def choice(self, population, size):
        """``size`` distinct indices from ``range(population)`` (partial Fisher-Yates)."""
        if not 0 <= size <= population:
            raise InvalidInput("choice size out of range")
        perm = np.arange(population)
        u = self.random(size)
        for i in range(size):
            j = i + min(int(u[i] * (population - i)), population - i - 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm[:size].copy()


def rng_uniform(state, lo, hi, n):
    return state.uniform(lo, hi, n)
