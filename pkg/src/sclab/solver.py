"""Viscous approximation ``du - (1/n) Lap u dt + div A(u) dt = Phi(u) dW`` with
zero Dirichlet data, discretised by first-order upwind finite volumes, explicit
central diffusion and Euler-Maruyama noise evaluated at the pre-step state.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .grid import Field, Grid
from .models import FluxModel, Models, NoiseModel
from .noise import NoisePath, step_index

log = logging.getLogger(__name__)


class CFLViolation(ValueError):
    pass


class NumericalAbort(RuntimeError):
    """Non-finite state produced by the scheme."""


@dataclass(frozen=True)
class SolverConfig:
    """Run parameters.

    ``dt=None`` selects the largest step ``1/N <= cfl_dt`` with ``N`` a multiple
    of 100, so every time on a 0.01 lattice is a step boundary.  ``clamp=None``
    means ten times the initial sup-norm (with the sup-norm floored at 1).
    ``n=math.inf`` switches the viscosity off.
    """

    n: float = 200
    dt: float | None = None
    theta_cfl: float = 0.5
    clamp: float | None = None
    s: float = 0.0
    t_end: float = 1.0

    def __post_init__(self):
        if not self.n > 0:
            raise ValueError("viscosity index n must be positive")
        if not 0 < self.theta_cfl <= 1:
            raise ValueError("theta_cfl must lie in (0, 1]")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.clamp is not None and not self.clamp > 0:
            raise ValueError("clamp must be positive")
        if self.t_end < self.s:
            raise ValueError(f"t_end={self.t_end} precedes the start time s={self.s}")

    @property
    def nu(self) -> float:
        return 0.0 if math.isinf(self.n) else 1.0 / self.n


def resolve_clamp(config: SolverConfig, initial: np.ndarray) -> float:
    if config.clamp is not None:
        return float(config.clamp)
    return 10.0 * max(float(np.max(np.abs(initial))) if initial.size else 0.0, 1.0)


def cfl_dt(grid: Grid, flux: FluxModel, config: SolverConfig, u_bound: float) -> float:
    """Largest stable explicit step for states bounded by ``u_bound``.

    ``theta * min(1 / sum_i(a/dx_i), 1 / (2 nu sum_i dx_i^-2))`` with ``a`` the
    per-component wave speed; in 1-D this is ``theta*min(dx/a, dx^2 n/2)``.
    """
    limit = _stability_limit(grid, flux, config.nu, u_bound)
    if math.isinf(limit):
        raise ValueError("zero wave speed and zero viscosity: no CFL restriction exists")
    return config.theta_cfl * limit


def _stability_limit(grid: Grid, flux: FluxModel, nu: float, u_bound: float) -> float:
    if not u_bound > 0:
        raise ValueError("u_bound must be positive")
    a = float(flux.speed(u_bound))
    inv_dx = [1.0 / h for h in grid.dx]
    transport = a * sum(inv_dx)
    diffusion = 2.0 * nu * sum(h * h for h in inv_dx)
    return min(1.0 / transport if transport else math.inf,
               1.0 / diffusion if diffusion else math.inf)


def auto_dt(grid: Grid, flux: FluxModel, config: SolverConfig, u_bound: float) -> float:
    dt = cfl_dt(grid, flux, config, u_bound)
    N = math.ceil(1.0 / dt / 100.0) * 100
    return 1.0 / N


def steps_between(t0: float, t1: float, dt: float) -> int:
    return step_index(t1, dt) - step_index(t0, dt)


@dataclass
class Trajectory:
    """Snapshots of a single run plus its dissipation record.

    ``dissipation`` is the per-cell running sum over steps of
    ``dt * nu * |grad u|^2`` evaluated at pre-step states.
    """

    grid: Grid
    times: np.ndarray
    snapshots: np.ndarray = field(repr=False)
    dissipation: np.ndarray = field(repr=False)
    dt: float
    stride: int
    clamp_events: int
    config: SolverConfig
    path: NoisePath | None = None

    @property
    def terminal(self) -> Field:
        return Field(self.grid, self.snapshots[-1])

    def field_at(self, i: int) -> Field:
        return Field(self.grid, self.snapshots[i])


@dataclass(frozen=True)
class _Coeffs:
    """Kernel arguments shared by all stepping routines."""

    lam0: float
    lam1: float
    mu0: float
    mu1: float
    q0: int
    fs: float
    d: int
    sig: int
    c: np.ndarray
    cprof: np.ndarray
    sqrt_delta: float
    p: int
    clamp: float
    dt: float
    nu: float


def _coefficients(grid: Grid, models: Models, delta: float, dt: float,
                  config: SolverConfig, clamp: float) -> _Coeffs:
    flux, noise = models.flux, models.noise
    if flux.d != grid.dim:
        raise ValueError(f"flux dimension {flux.d} != grid dimension {grid.dim}")
    ratio = dt / delta
    p = round(ratio)
    if p < 1 or abs(ratio - p) > 1e-9 * max(1.0, ratio):
        raise ValueError(f"dt={dt} is not a positive integer multiple of the base step {delta}")
    limit = _stability_limit(grid, flux, config.nu, clamp)
    if dt > limit * (1 + 1e-12):
        raise CFLViolation(f"dt={dt:.6g} exceeds the stability limit {limit:.6g} "
                           f"for |u| <= {clamp:g}")
    dx = grid.dx
    nu = config.nu
    dx1 = dx[1] if grid.dim == 2 else 1.0
    return _Coeffs(
        lam0=dt / dx[0],
        lam1=dt / dx1 if grid.dim == 2 else 0.0,
        mu0=nu * dt / dx[0] ** 2,
        mu1=nu * dt / dx1 ** 2 if grid.dim == 2 else 0.0,
        q0=int(flux.q0),
        fs=flux.scale / flux.d,
        d=flux.d,
        sig=noise.sigma_code,
        c=np.ascontiguousarray(noise.c, dtype=float),
        cprof=np.ascontiguousarray(noise.cell_profiles(grid).reshape(noise.K, grid.cells[0])),
        sqrt_delta=math.sqrt(delta),
        p=int(p),
        clamp=float(clamp),
        dt=float(dt),
        nu=nu,
    )


def _check_path(path: NoisePath, noise: NoiseModel, start: float) -> int:
    if path.K < noise.K:
        raise ValueError(f"noise path carries {path.K} modes, model needs {noise.K}")
    m = path.index(start)
    path.check_start(m)
    return m


def resolve_dt(grid: Grid, models: Models, config: SolverConfig, clamp: float) -> float:
    if config.dt is not None:
        return float(config.dt)
    return auto_dt(grid, models.flux, config, clamp)


def step(field: Field, flux: FluxModel, noise: NoiseModel, path: NoisePath,
         t: float, dt: float, config: SolverConfig) -> Field:
    """One scheme update from time ``t`` to ``t + dt``."""
    grid = field.grid
    clamp = resolve_clamp(config, field.values)
    co = _coefficients(grid, Models(flux, noise), path.delta, dt, config, clamp)
    m = _check_path(path, noise, t)
    u = field.values.ravel().copy()
    snaps = np.empty((2, grid.size))
    dissip = np.zeros(grid.size)
    status, nclamp, _ = _kernels.advance_single(
        u, grid.kernel_shape[1], np.uint64(path.seed), m, co.p, co.sqrt_delta, 1,
        co.c, co.cprof, co.lam0, co.lam1, co.mu0, co.mu1, co.q0, co.fs, co.sig,
        co.clamp, 1, snaps, dissip, 0.0, *_inv_sq(grid))
    if status != _kernels.OK:
        raise NumericalAbort(f"non-finite state at t={t}")
    if nclamp:
        log.warning("clamp engaged on %d cells at t=%g", nclamp, t)
    return Field(grid, u.reshape(grid.shape))


def _inv_sq(grid: Grid) -> tuple[float, float]:
    return 1.0 / grid.dx[0] ** 2, 1.0 / grid.dx[-1] ** 2


def run(initial: Field, models: Models, path: NoisePath, config: SolverConfig,
        stride: int = 1, record_dissipation: bool = True) -> Trajectory:
    """Iterate the scheme from ``config.s`` to ``config.t_end``.

    Snapshots are kept every ``stride`` steps plus the final state.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    grid = initial.grid
    clamp = resolve_clamp(config, initial.values)
    dt = resolve_dt(grid, models, config, clamp)
    co = _coefficients(grid, models, path.delta, dt, config, clamp)
    m0 = _check_path(path, models.noise, config.s)
    nsteps = steps_between(config.s, config.t_end, dt)
    nrec = 1 + (nsteps + stride - 1) // stride
    u = initial.values.ravel().copy()
    snaps = np.empty((nrec, grid.size))
    dissip = np.zeros(grid.size)
    status, nclamp, done = _kernels.advance_single(
        u, grid.kernel_shape[1], np.uint64(path.seed), m0, co.p, co.sqrt_delta, nsteps,
        co.c, co.cprof, co.lam0, co.lam1, co.mu0, co.mu1, co.q0, co.fs, co.sig,
        co.clamp, stride, snaps, dissip, dt * co.nu if record_dissipation else 0.0,
        *_inv_sq(grid))
    if status != _kernels.OK:
        raise NumericalAbort(
            f"non-finite state after step {done} (t={config.s + done * dt:g}, seed={path.seed})")
    if nclamp:
        log.warning("clamp engaged %d times during run (seed=%d)", nclamp, path.seed)
    steps = np.minimum(np.arange(nrec) * stride, nsteps)
    times = config.s + steps * dt
    times[-1] = config.t_end
    return Trajectory(
        grid=grid,
        times=times,
        snapshots=snaps.reshape((nrec,) + grid.shape),
        dissipation=dissip.reshape(grid.shape),
        dt=dt,
        stride=stride,
        clamp_events=int(nclamp),
        config=config,
        path=path,
    )


def dissipation_density(values: np.ndarray, grid: Grid, nu: float) -> np.ndarray:
    """``nu |grad u|^2`` per cell with the same stencil the solver accumulates."""
    u = np.ascontiguousarray(values.reshape(grid.kernel_shape))
    out = np.empty_like(u)
    _kernels.grad_sq_field(u, grid.dx[0], grid.dx[-1], out)
    return nu * out.reshape(grid.shape)
