"""Truncated cylindrical Wiener process with random access to its increments.

Mode ``k`` over the base step ``[m delta, (m+1) delta)`` receives
``sqrt(delta) * Z(seed, k, m)`` where ``Z`` is a counter-based standard normal.
Because every draw is addressed by absolute step index, increments before
t = 0 exist (two-sided time), two solvers handed the same path see the same
noise, and a run restarted mid-way reproduces the one-shot run bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import _rng

ALIGN_TOL = 1e-9


def step_index(t: float, delta: float) -> int:
    """Absolute lattice index of time ``t``; raises if ``t`` is off the lattice."""
    x = t / delta
    m = round(x)
    if abs(x - m) > ALIGN_TOL * max(1.0, abs(x)):
        raise ValueError(f"time {t!r} is not aligned to the base step {delta!r}")
    return int(m)


def member_seed(master_seed: int, index: int) -> int:
    """Seed of ensemble member ``index``: a hash of (master_seed, index)."""
    return int(_rng.derive_seed(np.uint64(master_seed % 2**64), np.uint64(index)))


@dataclass(frozen=True)
class NoisePath:
    """One realisation of ``K`` independent Brownian motions on a time lattice.

    ``origin`` (an absolute step index, or None for the whole line) marks where
    a view obtained from :func:`subpath_from` starts; queries before it are
    rejected.  Views share the parent's absolute indexing.
    """

    seed: int
    K: int
    delta: float
    origin: int | None = None

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("base step must be positive")
        if self.K < 0:
            raise ValueError("K must be >= 0")
        object.__setattr__(self, "seed", int(self.seed) % 2**64)

    @property
    def sqrt_delta(self) -> float:
        return math.sqrt(self.delta)

    def index(self, t: float) -> int:
        return step_index(t, self.delta)

    def check_start(self, m: int):
        if self.origin is not None and m < self.origin:
            raise ValueError(
                f"query starts at step {m}, before the view origin {self.origin}"
            )

    def increments(self, t0: float, t1: float) -> np.ndarray:
        """Increments of all K modes over ``[t0, t1)``."""
        m0, m1 = self.index(t0), self.index(t1)
        if m1 < m0:
            raise ValueError("t1 must not precede t0")
        self.check_start(m0)
        out = np.zeros(self.K)
        if m1 > m0 and self.K:
            _rng.fill_increments(np.uint64(self.seed), self.K, m0, m1 - m0,
                                 self.sqrt_delta, out)
        return out

    def increment(self, k: int, t0: float, t1: float) -> float:
        """Increment of mode ``k`` (1-based) over ``[t0, t1)``."""
        if not 1 <= k <= self.K:
            raise ValueError(f"mode {k} out of range 1..{self.K}")
        m0, m1 = self.index(t0), self.index(t1)
        if m1 < m0:
            raise ValueError("t1 must not precede t0")
        self.check_start(m0)
        acc = 0.0
        sd = self.sqrt_delta
        for z in _rng.normals_block(np.uint64(self.seed), k, m0, m1 - m0):
            acc += sd * z
        return acc


def increment(path: NoisePath, k: int, t0: float, t1: float) -> float:
    return path.increment(k, t0, t1)


def subpath_from(path: NoisePath, s: float) -> NoisePath:
    """View of ``path`` starting at absolute time ``s`` (may be negative)."""
    return replace(path, origin=path.index(s))
