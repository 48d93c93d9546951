"""Coupled pairs, Monte Carlo ensembles and their aggregate statistics.

Members are independent: member ``i`` of an ensemble with master seed ``S``
runs on the noise path seeded ``member_seed(S, i)``.  Work is split into
contiguous chunks of members, one per thread, and every member is computed by
the same compiled routine, so results do not depend on the thread count.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .grid import Field, WeightField, make_weight
from .models import Models
from .noise import NoisePath, member_seed
from .solver import (NumericalAbort, SolverConfig, _check_path, _coefficients,
                     resolve_clamp, resolve_dt, steps_between)

Z95 = 1.96
STATS_COLUMNS = ["t", "functional_name", "mean", "stderr", "ci_lo", "ci_hi", "R"]


def _chunks(B: int, threads: int) -> list[tuple[int, int]]:
    threads = max(1, min(int(threads), B)) if B else 1
    edges = np.linspace(0, B, threads + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _parallel(B: int, threads: int, work):
    chunks = _chunks(B, threads)
    if len(chunks) <= 1:
        for a, b in chunks:
            work(a, b)
        return
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        for fut in [pool.submit(work, a, b) for a, b in chunks]:
            fut.result()


def _record_times(s: float, dt: float, nsteps: int, every: int) -> np.ndarray:
    nrec = 1 + (nsteps + every - 1) // every
    steps = np.minimum(np.arange(nrec) * every, nsteps)
    return s + steps * dt


@dataclass
class CoupledPair:
    """Two solutions driven by one noise path and their distance functionals.

    ``flux_integral[r]`` is ``sum_j int_0^t int |A_j(u) - A_j(v)| dx ds`` up to
    record time ``times[r]``.
    """

    times: np.ndarray
    distance: np.ndarray
    flux_integral: np.ndarray
    norm_u: np.ndarray
    norm_v: np.ndarray
    seed: int
    dt: float
    clamp_events: int
    sup_norm: float

    @property
    def ledger(self) -> np.ndarray:
        return self.distance + self.flux_integral


@dataclass
class PairTemplate:
    """Everything about a coupled-pair experiment except the noise seed.

    ``delta`` is the noise base step (defaults to the solver step) and ``K`` the
    number of path modes (defaults to the model's).
    """

    theta: Field
    theta_tilde: Field
    models: Models
    config: SolverConfig
    weight: WeightField | None = None
    delta: float | None = None
    K: int | None = None

    def __post_init__(self):
        if self.theta.grid != self.theta_tilde.grid:
            raise ValueError("initial data live on different grids")
        if self.weight is None:
            self.weight = make_weight(self.theta.grid)

    @property
    def clamp(self) -> float:
        both = np.concatenate([self.theta.values.ravel(), self.theta_tilde.values.ravel()])
        return resolve_clamp(self.config, both)

    @property
    def dt(self) -> float:
        return resolve_dt(self.theta.grid, self.models, self.config, self.clamp)

    def path(self, seed: int) -> NoisePath:
        return NoisePath(seed, self.K if self.K is not None else self.models.noise.K,
                         self.delta if self.delta is not None else self.dt)


def _pair_arrays(template: PairTemplate, seeds, record_every: int, threads: int):
    grid = template.theta.grid
    cfg = template.config
    clamp = template.clamp
    dt = template.dt
    proto = template.path(0)
    co = _coefficients(grid, template.models, proto.delta, dt, cfg, clamp)
    m0 = _check_path(proto, template.models.noise, cfg.s)
    nsteps = steps_between(cfg.s, cfg.t_end, dt)
    times = _record_times(cfg.s, dt, nsteps, record_every)
    nrec = times.size
    B = len(seeds)
    U = np.repeat(template.theta.values.ravel()[None, :], B, axis=0)
    V = np.repeat(template.theta_tilde.values.ravel()[None, :], B, axis=0)
    seeds_arr = np.array([int(s) % 2**64 for s in seeds], dtype=np.uint64)
    out = {k: np.zeros((B, nrec)) for k in ("dist", "flux", "nu", "nv")}
    sup = np.zeros(B)
    clamps = np.zeros(B, dtype=np.int64)
    status = np.zeros(B, dtype=np.int64)
    w = template.weight.values.ravel().copy()
    n1 = grid.kernel_shape[1]

    def work(a, b):
        _kernels.advance_pairs(
            U[a:b], V[a:b], n1, seeds_arr[a:b], m0, co.p, co.sqrt_delta, nsteps,
            co.c, co.cprof, co.lam0, co.lam1, co.mu0, co.mu1, co.q0, co.fs, co.d,
            co.sig, co.clamp, record_every, w, grid.cell_volume, dt,
            out["dist"][a:b], out["flux"][a:b], out["nu"][a:b], out["nv"][a:b],
            sup[a:b], clamps[a:b], status[a:b])

    _parallel(B, threads, work)
    bad = np.flatnonzero(status != _kernels.OK)
    if bad.size:
        raise NumericalAbort(f"member {int(bad[0])} (seed={int(seeds_arr[bad[0]])}) "
                             "produced a non-finite state")
    return times, dt, out, sup, clamps, U, V


def run_coupled_pair(theta: Field, theta_tilde: Field, models: Models, path: NoisePath,
                     config: SolverConfig, weight: WeightField | None = None,
                     record_every: int = 1) -> CoupledPair:
    """Advance both data in lockstep on ``path``, recording distances each step."""
    tpl = PairTemplate(theta, theta_tilde, models, config, weight, path.delta, path.K)
    times, dt, out, sup, clamps, _, _ = _pair_arrays(tpl, [path.seed], record_every, 1)
    return CoupledPair(times, out["dist"][0], out["flux"][0], out["nu"][0], out["nv"][0],
                       path.seed, dt, int(clamps[0]), float(sup[0]))


@dataclass
class FunctionalStats:
    mean: np.ndarray
    stderr: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray

    @property
    def half_width(self) -> np.ndarray:
        return self.ci_hi - self.mean


@dataclass
class EnsembleStats:
    """Per-time Monte Carlo mean, standard error and 95% normal CI."""

    times: np.ndarray
    R: int
    master_seed: int
    member_seeds: list[int]
    functionals: dict[str, FunctionalStats]
    samples: dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    clamp_events: int = 0
    max_sup_norm: float = 0.0
    dt: float = math.nan

    def __getitem__(self, name: str) -> FunctionalStats:
        return self.functionals[name]


def summarize(samples: np.ndarray) -> FunctionalStats:
    """Aggregate an ``(R, T)`` sample array over members (axis 0)."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    R = samples.shape[0]
    if R < 2:
        raise ValueError("need at least two samples")
    mean = np.mean(samples, axis=0)
    std = np.std(samples, axis=0, ddof=1)
    se = std / math.sqrt(R)
    return FunctionalStats(mean, se, mean - Z95 * se, mean + Z95 * se)


def aggregate(samples: dict[str, np.ndarray], times, master_seed: int,
              member_seeds, **extra) -> EnsembleStats:
    R = len(member_seeds)
    return EnsembleStats(
        times=np.asarray(times, dtype=float), R=R, master_seed=int(master_seed),
        member_seeds=[int(s) for s in member_seeds],
        functionals={k: summarize(v) for k, v in samples.items()},
        samples=samples, **extra)


def member_seeds_for(master_seed: int, R: int, offset: int = 0) -> list[int]:
    return [member_seed(master_seed, offset + i) for i in range(R)]


def run_ensemble(template: PairTemplate, R: int, master_seed: int, threads: int = 1,
                 record_every: int = 1, member_seeds: list[int] | None = None
                 ) -> EnsembleStats:
    """Coupled-pair ensemble over ``R`` independent noise paths.

    Functionals: ``distance`` (weighted L1), ``flux_integral``, ``ledger``
    (their sum), ``norm_u`` and ``norm_v``.  ``member_seeds`` overrides the
    derived seeds (test hook).
    """
    if R < 2:
        raise ValueError("an ensemble needs R >= 2")
    seeds = member_seeds if member_seeds is not None else member_seeds_for(master_seed, R)
    if len(seeds) != R:
        raise ValueError("member_seeds must have length R")
    times, dt, out, sup, clamps, _, _ = _pair_arrays(template, seeds, record_every, threads)
    samples = {
        "distance": out["dist"],
        "flux_integral": out["flux"],
        "ledger": out["dist"] + out["flux"],
        "norm_u": out["nu"],
        "norm_v": out["nv"],
    }
    return aggregate(samples, times, master_seed, seeds,
                     clamp_events=int(clamps.sum()), max_sup_norm=float(sup.max()), dt=dt)


@dataclass
class BatchResult:
    """Independent single-field runs, one per seed."""

    times: np.ndarray
    terminal: np.ndarray
    l1w: np.ndarray
    probe: np.ndarray
    sup_p2: np.ndarray
    sup_p4: np.ndarray
    sup_norm: np.ndarray
    clamps: np.ndarray
    seeds: list[int]
    dt: float


def run_batch(initial: Field | np.ndarray, models: Models, config: SolverConfig, seeds,
              threads: int = 1, record_every: int = 1, weight: WeightField | None = None,
              probe: int | tuple[int, ...] = 0, delta: float | None = None,
              K: int | None = None, dt: float | None = None, clamp: float | None = None
              ) -> BatchResult:
    """Run ``len(seeds)`` members from ``initial`` (one field, or one per member).

    ``probe`` is a cell index (flat, or per-axis tuple) whose value is recorded.
    ``dt``/``clamp`` override the values resolved from ``config`` so that
    members started from different data share one step.
    """
    if isinstance(initial, Field):
        grid = initial.grid
        init = np.repeat(initial.values.ravel()[None, :], len(seeds), axis=0)
    else:
        raise TypeError("initial must be a Field; use run_batch_fields for stacks")
    return _run_batch_arrays(grid, init, models, config, seeds, threads, record_every,
                             weight, probe, delta, K, dt, clamp)


def run_batch_fields(grid, initials: np.ndarray, models: Models, config: SolverConfig,
                     seeds, threads: int = 1, record_every: int = 1,
                     weight: WeightField | None = None, probe=0, delta=None, K=None,
                     dt=None, clamp=None) -> BatchResult:
    init = np.asarray(initials, dtype=float).reshape(len(seeds), grid.size).copy()
    return _run_batch_arrays(grid, init, models, config, seeds, threads, record_every,
                             weight, probe, delta, K, dt, clamp)


def _run_batch_arrays(grid, init, models, config, seeds, threads, record_every,
                      weight, probe, delta, K, dt, clamp) -> BatchResult:
    weight = weight or make_weight(grid)
    clamp = clamp if clamp is not None else resolve_clamp(config, init)
    dt = dt if dt is not None else resolve_dt(grid, models, config, clamp)
    delta = delta if delta is not None else dt
    proto = NoisePath(0, K if K is not None else models.noise.K, delta)
    co = _coefficients(grid, models, delta, dt, config, clamp)
    m0 = _check_path(proto, models.noise, config.s)
    nsteps = steps_between(config.s, config.t_end, dt)
    times = _record_times(config.s, dt, nsteps, record_every)
    B = len(seeds)
    nrec = times.size
    if isinstance(probe, tuple):
        probe = int(np.ravel_multi_index(probe, grid.shape))
    U = np.ascontiguousarray(init)
    seeds_arr = np.array([int(s) % 2**64 for s in seeds], dtype=np.uint64)
    l1w = np.zeros((B, nrec))
    pr = np.zeros((B, nrec))
    p2 = np.zeros(B)
    p4 = np.zeros(B)
    sup = np.zeros(B)
    clamps = np.zeros(B, dtype=np.int64)
    status = np.zeros(B, dtype=np.int64)
    w = weight.values.ravel().copy()
    n1 = grid.kernel_shape[1]

    def work(a, b):
        _kernels.advance_batch(
            U[a:b], n1, seeds_arr[a:b], m0, co.p, co.sqrt_delta, nsteps, co.c, co.cprof,
            co.lam0, co.lam1, co.mu0, co.mu1, co.q0, co.fs, co.sig, co.clamp,
            record_every, w, grid.cell_volume, int(probe), l1w[a:b], pr[a:b],
            p2[a:b], p4[a:b], sup[a:b], clamps[a:b], status[a:b])

    _parallel(B, threads, work)
    bad = np.flatnonzero(status != _kernels.OK)
    if bad.size:
        raise NumericalAbort(f"member {int(bad[0])} (seed={int(seeds_arr[bad[0]])}) "
                             "produced a non-finite state")
    return BatchResult(times, U.reshape((B,) + grid.shape), l1w, pr, p2, p4, sup, clamps,
                       [int(s) for s in seeds_arr], dt)


def write_stats_csv(stats: EnsembleStats, path: str | Path,
                    names: list[str] | None = None) -> Path:
    """Write the stats table (one row per time and functional).

    The fixed columns are followed by the master seed.  Floats are written
    with ``repr`` so they read back bit for bit.
    """
    path = Path(path)
    names = names or list(stats.functionals)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(STATS_COLUMNS + ["seed"])
        for name in names:
            f = stats.functionals[name]
            for i, t in enumerate(stats.times):
                wr.writerow([repr(float(t)), name, repr(float(f.mean[i])),
                             repr(float(f.stderr[i])), repr(float(f.ci_lo[i])),
                             repr(float(f.ci_hi[i])), stats.R, stats.master_seed])
    return path


def read_stats_csv(path: str | Path) -> dict[str, dict[str, np.ndarray]]:
    """Inverse of :func:`write_stats_csv`: functional name -> column arrays."""
    table: dict[str, dict[str, list]] = {}
    with Path(path).open() as fh:
        rd = csv.DictReader(fh)
        if rd.fieldnames is None or rd.fieldnames[:len(STATS_COLUMNS)] != STATS_COLUMNS:
            raise ValueError(f"unexpected header {rd.fieldnames}")
        cols = [c for c in rd.fieldnames if c != "functional_name"]
        for row in rd:
            d = table.setdefault(row["functional_name"], {c: [] for c in cols})
            for c in d:
                d[c].append(float(row[c]))
    return {k: {c: np.array(v) for c, v in d.items()} for k, d in table.items()}
