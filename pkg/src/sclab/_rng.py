"""Counter-based standard normals: a pure function of (seed, mode, step).

splitmix64 finalisers are chained over the three keys; two decorrelated
64-bit words feed a Box-Muller transform (cosine branch only).
"""

import math

import numba as nb
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0
_TWO_PI = 2.0 * math.pi


@nb.njit(nogil=True, cache=True, inline="always")
def mix64(x):
    z = x + _GOLDEN
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@nb.njit(nogil=True, cache=True)
def normal_at(seed, k, m):
    """Standard normal keyed by (seed, k, m); m may be negative."""
    h1 = mix64(np.uint64(seed) ^ mix64(np.uint64(k) ^ mix64(np.uint64(np.int64(m)))))
    h2 = mix64(h1 ^ _GOLDEN)
    u1 = (float(h1 >> _S11) + 0.5) * _INV53
    u2 = (float(h2 >> _S11) + 0.5) * _INV53
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(_TWO_PI * u2)


@nb.njit(nogil=True, cache=True)
def fill_increments(seed, K, m0, p, sqrt_delta, out):
    """Brownian increments of modes 1..K over base steps m0 .. m0+p-1."""
    for k in range(K):
        acc = 0.0
        for i in range(p):
            acc += sqrt_delta * normal_at(seed, k + 1, m0 + i)
        out[k] = acc


@nb.njit(nogil=True, cache=True)
def derive_seed(master, index):
    return mix64(mix64(np.uint64(master)) ^ np.uint64(index))


@nb.njit(nogil=True, cache=True)
def normals_block(seed, k, m0, count):
    out = np.empty(count)
    for i in range(count):
        out[i] = normal_at(seed, k, m0 + i)
    return out
