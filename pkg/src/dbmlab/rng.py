"""Counter-based random numbers.

Every draw is a pure function of ``(seed, step, walker, counter)``, so a
walker's trajectory does not depend on which thread runs it or in which
order walkers are scheduled.  The mixing function is the SplitMix64
finalizer; a stream key is built by chaining it over the three indices and
successive draws hash ``key + counter * GOLDEN``.

All functions are numba-compiled and callable from plain Python as well.
"""

import numpy as np
from numba import njit

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_STEP_SALT = np.uint64(0xD1B54A32D192ED03)
_WALKER_SALT = np.uint64(0x8CB92BA72F3D8DD7)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0

# walker index reserved for the chain's own draws (dbm_step, Eden choice)
CHAIN_STREAM = 0xFFFFFFFF


@njit(cache=True, inline="always")
def mix64(z):
    z = np.uint64(z)
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def stream_key(seed, step, walker):
    k = mix64(np.uint64(seed) + GOLDEN)
    k = mix64(k ^ (np.uint64(step) * _STEP_SALT + GOLDEN))
    k = mix64(k ^ (np.uint64(walker) * _WALKER_SALT + GOLDEN))
    return k


@njit(cache=True, inline="always")
def uniform(key, counter):
    """Uniform double in [0, 1) for draw number ``counter`` of stream ``key``."""
    z = mix64(np.uint64(key) + np.uint64(counter) * GOLDEN)
    return np.float64(z >> _S11) * _INV53


@njit(cache=True)
def uniforms(key, start, n):
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        out[i] = uniform(key, start + i)
    return out


class Stream:
    """Sequential Python-side view of one counter-based stream."""

    def __init__(self, seed, step, walker=CHAIN_STREAM):
        self.key = np.uint64(stream_key(np.uint64(seed % 2**64), np.uint64(step), np.uint64(walker)))
        self.counter = 0

    def random(self):
        u = uniform(self.key, np.uint64(self.counter))
        self.counter += 1
        return float(u)

    def choice_index(self, cumulative):
        """Index ``i`` with ``cumulative[i-1] <= u*total < cumulative[i]``."""
        total = cumulative[-1]
        u = self.random() * total
        i = int(np.searchsorted(cumulative, u, side="right"))
        return min(i, len(cumulative) - 1)
