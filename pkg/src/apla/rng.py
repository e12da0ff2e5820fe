"""Pinned pseudo-random generator: SplitMix64 seeding feeding xoshiro256**.

Everything random in the package (weight init, column sampling, data
generation, shuffling) draws from :class:`Rng`, so a seed fully determines a
run on any platform.
"""

import math

import numba
import numpy as np

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(state):
    """Advance a SplitMix64 state once. Returns ``(new_state, output)``."""
    state = (state + _GOLDEN) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def derive_seed(seed, *salt):
    """Mix integer salts into ``seed`` to get an independent stream seed."""
    state = seed & MASK64
    for s in salt:
        state, out = splitmix64(state ^ (s & MASK64))
        state = out
    return state


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & MASK64


@numba.njit(cache=True)
def _normal_fill(state, n, pending, has_pending):
    """Box-Muller over the xoshiro256** stream held in ``state`` (updated in place)."""
    out = np.empty(n)
    s0, s1, s2, s3 = state[0], state[1], state[2], state[3]
    i = 0
    if has_pending and n > 0:
        out[0] = pending
        has_pending = False
        i = 1
    u = np.empty(2)
    while i < n:
        for c in range(2):
            x = s1 * numba.uint64(5)
            result = ((x << numba.uint64(7)) | (x >> numba.uint64(57))) * numba.uint64(9)
            t = s1 << numba.uint64(17)
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = (s3 << numba.uint64(45)) | (s3 >> numba.uint64(19))
            u[c] = (result >> numba.uint64(11)) * (1.0 / 9007199254740992.0)
        radius = math.sqrt(-2.0 * math.log(1.0 - u[0]))
        angle = 2.0 * math.pi * u[1]
        out[i] = radius * math.cos(angle)
        i += 1
        if i < n:
            out[i] = radius * math.sin(angle)
            i += 1
        else:
            pending = radius * math.sin(angle)
            has_pending = True
    state[0] = s0
    state[1] = s1
    state[2] = s2
    state[3] = s3
    return out, pending, has_pending


class Rng:
    """xoshiro256** generator.

    >>> Rng(1).next_u64() == Rng(1).next_u64()
    True
    """

    __slots__ = ("state", "pending_gaussian")

    def __init__(self, seed):
        sm = int(seed) & MASK64
        words = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            words.append(out)
        self.state = words
        self.pending_gaussian = None

    def next_u64(self):
        s0, s1, s2, s3 = self.state
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.state = [s0, s1, s2, s3]
        return result

    def uniform(self):
        """53-bit float in [0, 1)."""
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)

    def below(self, n):
        """Integer in [0, n) as ``floor(uniform() * n)``."""
        return int(self.uniform() * n)

    def normal(self):
        """Standard normal by Box-Muller; the sine member is cached for the next call."""
        return float(self.normal_array(1)[0])

    def normal_array(self, shape, std=1.0):
        """Array of ``shape`` filled row-major with successive N(0, std^2) draws.

        Single draws and bulk fills share one compiled kernel, so a stream is
        identical however it is chunked.
        """
        n = int(np.prod(shape, dtype=np.int64))
        state = np.array(self.state, dtype=np.uint64)
        pending = self.pending_gaussian
        out, cached, has_cached = _normal_fill(state, n, 0.0 if pending is None else pending,
                                               pending is not None)
        self.state = [int(w) for w in state]
        self.pending_gaussian = float(cached) if has_cached else None
        return (out * std).reshape(shape)

    def permutation(self, n):
        """Full Fisher-Yates shuffle of ``range(n)``."""
        return np.asarray(self.partial_shuffle(n, n), dtype=np.int64)

    def partial_shuffle(self, n, k):
        """First ``k`` entries of a forward Fisher-Yates pass over ``range(n)``."""
        items = list(range(n))
        for i in range(k):
            j = i + self.below(n - i)
            items[i], items[j] = items[j], items[i]
        return items[:k]
