"""Counter-based seeding used by the compiled kernels.

Every walk and every training chunk draws from its own splitmix64 stream
whose seed is a hash of (run seed, start node, walk index). The output is
then independent of how work is split between threads.
"""

import numpy as np
from numba import njit, uint64

_GOLDEN = uint64(0x9E3779B97F4A7C15)
_M1 = uint64(0xBF58476D1CE4E5B9)
_M2 = uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


@njit(cache=True, inline="always")
def mix64(z):
    z = uint64(z)
    z = (z ^ (z >> uint64(30))) * _M1
    z = (z ^ (z >> uint64(27))) * _M2
    return z ^ (z >> uint64(31))


@njit(cache=True, inline="always")
def derive(seed, a, b):
    h = mix64(uint64(seed) + _GOLDEN)
    h = mix64(h ^ (uint64(a) * _M1 + _GOLDEN))
    return mix64(h ^ (uint64(b) * _M2 + _GOLDEN))


@njit(cache=True, inline="always")
def next_u64(state):
    """Advance a one-element uint64 state array; returns the next output."""
    state[0] += _GOLDEN
    return mix64(state[0])


@njit(cache=True, inline="always")
def next_float(state):
    return (next_u64(state) >> uint64(11)) * (1.0 / 9007199254740992.0)


def derive_seed(seed: int, *parts: int) -> int:
    """Python-side twin of :func:`derive` folded over any number of parts."""
    h = int(seed) & _MASK64
    for p in parts:
        h = int(derive(np.uint64(h), np.uint64(int(p) & _MASK64), np.uint64(0)))
    return h
