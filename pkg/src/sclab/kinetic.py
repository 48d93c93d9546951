"""Kinetic picture of a discrete trajectory.

``f(t, x, xi) = 1[u(t, x) > xi]`` on a midpoint xi-lattice, chi-function
pairings, and the weak-form residual of the viscous kinetic equation

    d<f, phi> = <f, d_t phi + a(xi).grad phi + nu Lap phi> dt
                + sum_k int g_k phi(x, u) dx dB_k
                + 1/2 int d_xi phi(x, u) G^2(x, u) dx dt
                - int nu |grad u|^2 d_xi phi(x, u) dx dt

tested against separable bumps supported away from every boundary.  Young
measure terms substitute ``xi = u(t, x)`` exactly; only pairings with ``f``
use the lattice.  Spatial derivatives of the test function are applied with
the adjoints of the scheme's own stencils (forward difference for upwind
transport, three-point Laplacian), so the residual of a state that the
scheme leaves untouched telescopes to rounding error.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .grid import Grid
from .models import Models
from .noise import NoisePath
from .solver import Trajectory

MARGIN_CELLS = 2


@dataclass(frozen=True)
class XiLattice:
    """Midpoints ``xi_l = -extent + (l + 1/2) dxi`` of ``count`` cells."""

    extent: float
    count: int

    def __post_init__(self):
        if not self.extent > 0:
            raise ValueError("xi extent must be positive")
        if self.count < 2:
            raise ValueError("xi lattice needs >= 2 points")

    @property
    def spacing(self) -> float:
        return 2.0 * self.extent / self.count

    @property
    def points(self) -> np.ndarray:
        return -self.extent + (np.arange(self.count) + 0.5) * self.spacing

    def check(self, values, what: str = "value"):
        m = float(np.max(np.abs(values))) if np.size(values) else 0.0
        if not m < self.extent:
            raise ValueError(f"{what} |u| = {m:g} is not inside the xi lattice (-{self.extent:g}, "
                             f"{self.extent:g})")

    def below(self, u) -> np.ndarray:
        """Number of lattice points strictly below ``u`` (``sum_l f(xi_l)``)."""
        return np.searchsorted(self.points, np.asarray(u, dtype=float), side="left")

    def cumulative(self, h: np.ndarray) -> np.ndarray:
        """Table ``T[c] = dxi * sum_{l < c} h(xi_l)`` for ``c = 0..count``."""
        out = np.zeros(self.count + 1)
        out[1:] = np.cumsum(h) * self.spacing
        return out


@dataclass
class KineticDensity:
    """Indicator lattice of a trajectory, built lazily per snapshot."""

    times: np.ndarray
    states: np.ndarray
    lattice: XiLattice

    @property
    def xi(self) -> np.ndarray:
        return self.lattice.points

    def f_at(self, i: int) -> np.ndarray:
        """``f`` of snapshot ``i``: bool array ``(*grid, count)``."""
        return self.states[i][..., None] > self.xi

    @property
    def values(self) -> np.ndarray:
        return self.states[..., None] > self.xi

    def chi_integral(self, i: int) -> np.ndarray:
        """``int (f - 1[0 > xi]) dxi`` per cell; recovers ``u`` within ``dxi``."""
        f = self.f_at(i)
        return np.sum(f.astype(float) - (self.xi < 0), axis=-1) * self.lattice.spacing


def build_kinetic(trajectory: Trajectory, xi_max: float, n_xi: int) -> KineticDensity:
    """Kinetic density of every snapshot on ``n_xi`` midpoints of ``(-xi_max, xi_max)``."""
    lat = XiLattice(float(xi_max), int(n_xi))
    for i, snap in enumerate(trajectory.snapshots):
        m = float(np.max(np.abs(snap)))
        if not m < lat.extent:
            raise ValueError(f"snapshot {i} (t={trajectory.times[i]:g}) has |u| = {m:g} "
                             f">= xi_max = {lat.extent:g}")
    return KineticDensity(trajectory.times, trajectory.snapshots, lat)


def chi_pairing(u_val, v_val, lattice: XiLattice | np.ndarray):
    """``(int f_u (1 - f_v) dxi, int (1 - f_u) f_v dxi)`` on the lattice.

    These approximate ``(u - v)^+`` and ``(u - v)^-`` to within one lattice
    spacing and are exact when ``u`` and ``v`` sit on cell edges.
    """
    if not isinstance(lattice, XiLattice):
        pts = np.asarray(lattice, dtype=float)
        h = pts[1] - pts[0]
        lattice = XiLattice(float(-pts[0] + h / 2), pts.size)
    lattice.check(u_val, "u")
    lattice.check(v_val, "v")
    cu = lattice.below(u_val)
    cv = lattice.below(v_val)
    h = lattice.spacing
    plus = np.maximum(cu - cv, 0) * h
    minus = np.maximum(cv - cu, 0) * h
    if np.ndim(plus) == 0:
        return float(plus), float(minus)
    return plus, minus


# ---------------------------------------------------------------- test functions


def _bump(r):
    """``(1 - r^2)^3`` on ``|r| < 1``: a C^2 bump with value 1 at 0."""
    r = np.asarray(r, dtype=float)
    return np.where(np.abs(r) < 1, (1 - r * r) ** 3, 0.0)


def _bump_d(r):
    r = np.asarray(r, dtype=float)
    return np.where(np.abs(r) < 1, -6 * r * (1 - r * r) ** 2, 0.0)


def _bump_dd(r):
    r = np.asarray(r, dtype=float)
    return np.where(np.abs(r) < 1, -6 * (1 - r * r) ** 2 + 24 * r * r * (1 - r * r), 0.0)


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError("empty support interval")

    @property
    def center(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def half(self) -> float:
        return 0.5 * (self.hi - self.lo)

    def value(self, z):
        return _bump((np.asarray(z) - self.center) / self.half)

    def d(self, z):
        return _bump_d((np.asarray(z) - self.center) / self.half) / self.half

    def dd(self, z):
        return _bump_dd((np.asarray(z) - self.center) / self.half) / self.half ** 2


@dataclass(frozen=True)
class TestFunction:
    """``phi(t, x, xi) = b_t(t) * prod_i b_i(x_i) * b_xi(xi)`` with C^2 bumps.

    ``xi=None`` gives a factor equal to 1 everywhere (used to test that the
    xi-derivative terms drop out).
    """

    __test__ = False  # not a pytest class

    t: Interval
    x: tuple[Interval, ...]
    xi: Interval | None
    name: str = "phi"

    def phi_t(self, t):
        return self.t.value(t)

    def dphi_t(self, t):
        return self.t.d(t)

    def phi_x(self, grid: Grid) -> np.ndarray:
        coords = grid.coordinates()
        out = np.ones(grid.shape)
        for iv, c in zip(self.x, coords):
            out = out * iv.value(c)
        return out

    def grad_x(self, grid: Grid) -> list[np.ndarray]:
        """Analytic spatial gradient of the x factor."""
        coords = grid.coordinates()
        vals = [iv.value(c) for iv, c in zip(self.x, coords)]
        out = []
        for i, (iv, c) in enumerate(zip(self.x, coords)):
            g = iv.d(c)
            for j, v in enumerate(vals):
                if j != i:
                    g = g * v
            out.append(g)
        return out

    def lap_x(self, grid: Grid) -> np.ndarray:
        coords = grid.coordinates()
        vals = [iv.value(c) for iv, c in zip(self.x, coords)]
        out = np.zeros(grid.shape)
        for i, (iv, c) in enumerate(zip(self.x, coords)):
            g = iv.dd(c)
            for j, v in enumerate(vals):
                if j != i:
                    g = g * v
            out = out + g
        return out

    def phi_xi(self, xi):
        if self.xi is None:
            return np.ones_like(np.asarray(xi, dtype=float))
        return self.xi.value(xi)

    def dphi_xi(self, xi):
        if self.xi is None:
            return np.zeros_like(np.asarray(xi, dtype=float))
        return self.xi.d(xi)

    def check_support(self, grid: Grid, times: np.ndarray, dt: float, lattice: XiLattice):
        """Enforce the interior margins (2 cells in x, 2 steps in t, 2 in xi)."""
        if len(self.x) != grid.dim:
            raise ValueError(f"{self.name}: {len(self.x)} x-factors for a {grid.dim}-D grid")
        for i, (iv, (a, b)) in enumerate(zip(self.x, grid.extents)):
            m = MARGIN_CELLS * grid.dx[i]
            if iv.lo < a + m - 1e-12 or iv.hi > b - m + 1e-12:
                raise ValueError(f"{self.name}: x-support on axis {i} is within {m:g} of the boundary")
        m = MARGIN_CELLS * dt
        if self.t.lo < times[0] + m - 1e-12 or self.t.hi > times[-1] - m + 1e-12:
            raise ValueError(f"{self.name}: t-support is within {m:g} of the time interval ends")
        if self.xi is not None:
            m = MARGIN_CELLS * lattice.spacing
            if self.xi.lo < -lattice.extent + m - 1e-12 or self.xi.hi > lattice.extent - m + 1e-12:
                raise ValueError(f"{self.name}: xi-support is within {m:g} of the lattice ends")


def default_battery(grid: Grid, t0: float, t1: float, xi_max: float) -> list[TestFunction]:
    """A few test functions with different centres in x and xi."""
    span_t = Interval(t0 + 0.1 * (t1 - t0), t1 - 0.1 * (t1 - t0))
    out = []
    specs = [((0.15, 0.85), (-0.6, 0.6)), ((0.1, 0.6), (-0.2, 0.7)), ((0.4, 0.9), (-0.7, 0.3))]
    for i, (xs, xis) in enumerate(specs):
        xiv = []
        for a, b in grid.extents:
            L = b - a
            xiv.append(Interval(a + xs[0] * L, a + xs[1] * L))
        out.append(TestFunction(span_t, tuple(xiv), Interval(xis[0] * xi_max, xis[1] * xi_max),
                                name=f"phi{i}"))
    return out


# ---------------------------------------------------------------- residual


def _forward_diff_sum(phi: np.ndarray, grid: Grid) -> np.ndarray:
    """``sum_i (phi(x + e_i) - phi(x)) / dx_i`` with zero outside the box."""
    out = np.zeros_like(phi)
    for ax in range(grid.dim):
        p = np.moveaxis(phi, ax, 0)
        nxt = np.zeros_like(p)
        nxt[:-1] = p[1:]
        out = out + np.moveaxis(nxt - p, 0, ax) / grid.dx[ax]
    return out


def _laplacian(phi: np.ndarray, grid: Grid) -> np.ndarray:
    out = np.zeros_like(phi)
    for ax in range(grid.dim):
        p = np.moveaxis(phi, ax, 0)
        lap = -2.0 * p
        lap[1:] += p[:-1]
        lap[:-1] += p[1:]
        out = out + np.moveaxis(lap, 0, ax) / grid.dx[ax] ** 2
    return out


def _grad_sq(states: np.ndarray, grid: Grid) -> np.ndarray:
    """Same stencil as the solver's dissipation accumulator, batched over axis 0."""
    out = np.zeros_like(states)
    for ax in range(grid.dim):
        p = np.moveaxis(states, ax + 1, 1)
        left = np.zeros_like(p)
        left[:, 1:] = p[:, :-1]
        right = np.zeros_like(p)
        right[:, :-1] = p[:, 1:]
        g = 0.5 * ((p - left) ** 2 + (right - p) ** 2) / grid.dx[ax] ** 2
        out = out + np.moveaxis(g, 1, ax + 1)
    return out


@dataclass
class ResidualTerms:
    """Signed contributions summed over steps; ``residual`` is their total."""

    time: float
    transport: float
    diffusion: float
    martingale: float
    ito: float
    dissipation: float

    @property
    def residual(self) -> float:
        return (self.time - self.transport - self.diffusion - self.martingale - self.ito
                + self.dissipation)


@dataclass
class ResidualReport:
    names: list[str]
    terms: list[ResidualTerms]
    lattice: XiLattice
    dt: float

    @property
    def residuals(self) -> np.ndarray:
        return np.array([abs(t.residual) for t in self.terms])

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residuals)) if self.terms else 0.0


def kinetic_residual(trajectory: Trajectory, models: Models,
                     test_functions: Sequence[TestFunction], path: NoisePath | None = None,
                     xi_max: float | None = None, n_xi: int | None = None) -> ResidualReport:
    """Discrete weak-form residual of the kinetic equation for each test function.

    The trajectory must hold every step (stride 1).  Noise increments are the
    ones the solver consumed, re-read from ``path`` (default: the trajectory's
    own).  ``xi_max`` defaults to 1.5 times the largest recorded ``|u|`` and
    ``n_xi`` to the number of cells on the first axis (rounded up to even).
    """
    if trajectory.stride != 1:
        raise ValueError("kinetic_residual needs a trajectory recorded at every step")
    grid = trajectory.grid
    U = trajectory.snapshots
    times = trajectory.times
    dt = trajectory.dt
    nu = trajectory.config.nu
    flux, noise = models.flux, models.noise
    if xi_max is None:
        xi_max = 1.5 * max(float(np.max(np.abs(U))), 1e-3)
    if n_xi is None:
        n_xi = grid.cells[0] + grid.cells[0] % 2
    lat = XiLattice(float(xi_max), int(n_xi))
    lat.check(U, "trajectory state")
    path = path or trajectory.path
    nsteps = U.shape[0] - 1
    dV = grid.cell_volume
    xi = lat.points
    t_left = times[:-1]

    # per-step noise forcing sum_k g_k(x, u^m) dB_k and G^2(x, u^m)
    prev = U[:-1]
    if noise.is_zero or nsteps == 0:
        forcing = np.zeros_like(prev)
        G2 = np.zeros_like(prev)
    else:
        if path is None:
            raise ValueError("a noise path is needed to rebuild the stochastic forcing")
        dB = np.array([path.increments(t, t + dt) for t in t_left])       # (steps, K)
        prof = noise.cell_profiles(grid)                                    # (K, n0)
        add = dB @ prof                                                     # (steps, n0)
        Mk = dB @ noise.c                                                   # (steps,)
        expand = (slice(None), slice(None)) + (None,) * (grid.dim - 1)
        sig = noise.sigma_fn(prev)
        forcing = add[expand] + sig * Mk.reshape((-1,) + (1,) * grid.dim)
        xhat = np.broadcast_to(grid.first_axis_unit().reshape((-1,) + (1,) * (grid.dim - 1)),
                               grid.shape)
        G2 = noise.G2(xhat[None], prev)
    q = nu * _grad_sq(prev, grid) if nu > 0 else np.zeros_like(prev)
    a_xi = flux.speed(xi)

    below = lat.below(U)                                                    # (steps+1, *grid)
    sum_axes = tuple(range(1, grid.dim + 1))
    names, terms = [], []
    for tf in test_functions:
        tf.check_support(grid, times, dt, lat)
        px = tf.phi_x(grid)
        dpx = _forward_diff_sum(px, grid)
        lpx = _laplacian(px, grid)
        S = lat.cumulative(tf.phi_xi(xi))
        Sa = lat.cumulative(a_xi * tf.phi_xi(xi))
        pt = tf.phi_t(t_left)

        Sk = S[below]
        time_term = float(np.sum(pt * np.sum((Sk[1:] - Sk[:-1]) * px, axis=sum_axes)) * dV)
        transport = float(np.sum(pt * np.sum(Sa[below[:-1]] * dpx, axis=sum_axes)) * dt * dV)
        diffusion = float(np.sum(pt * np.sum(Sk[:-1] * lpx, axis=sum_axes)) * nu * dt * dV)
        young = tf.phi_xi(prev) * px
        dyoung = tf.dphi_xi(prev) * px
        martingale = float(np.sum(pt * np.sum(young * forcing, axis=sum_axes)) * dV)
        ito = float(np.sum(pt * np.sum(dyoung * G2, axis=sum_axes)) * 0.5 * dt * dV)
        dissip = float(np.sum(pt * np.sum(dyoung * q, axis=sum_axes)) * dt * dV)
        names.append(tf.name)
        terms.append(ResidualTerms(time_term, transport, diffusion, martingale, ito, dissip))
    return ResidualReport(names, terms, lat, dt)


def write_residual_csv(rows: Sequence[tuple[str, str, float]], path, seed: int) -> Path:
    """Rows of ``(phi_id, resolution, residual)``."""
    with Path(path).open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["phi_id", "resolution", "residual", "seed"])
        for phi_id, res, r in rows:
            wr.writerow([phi_id, res, repr(float(r)), seed])
    return Path(path)
