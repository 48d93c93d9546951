"""Verdicts from ensemble output: decay-rate fits, 1-D Wasserstein distances
between observable clouds, the viscosity Cauchy study and backward coupling.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .ensemble import EnsembleStats, member_seeds_for, run_batch, summarize
from .grid import Field, WeightField, make_weight, norm_lp
from .models import Models
from .noise import NoisePath, step_index
from .solver import SolverConfig, auto_dt, resolve_clamp, run

# ---------------------------------------------------------------- decay fits


@dataclass
class DecayFit:
    """Least-squares fit of ``log mean`` against ``log t`` on a window."""

    t_min: float
    t_max: float
    slope: float
    intercept: float
    residual_rms: float
    n_points: int
    q0: int
    tol: float
    floor_reached: bool = False
    weight_qstar: float = math.nan

    @property
    def theoretical_slope(self) -> float:
        return -1.0 / self.q0

    @property
    def q_star(self) -> float:
        return (self.q0 + 1) / self.q0

    @property
    def bound(self) -> float:
        return self.theoretical_slope + self.tol

    @property
    def passed(self) -> bool:
        return (not self.floor_reached) and self.slope <= self.bound


def log_spaced_times(times: np.ndarray, window: tuple[float, float], count: int) -> np.ndarray:
    """Recorded times nearest to ``count`` geometrically spaced targets."""
    times = np.asarray(times, dtype=float)
    lo, hi = window
    inside = times[(times >= lo - 1e-12) & (times <= hi + 1e-12)]
    targets = np.geomspace(lo, hi, count)
    idx = np.unique(np.abs(inside[None, :] - targets[:, None]).argmin(axis=1))
    return inside[idx]


def fit_power_law(times, values, window: tuple[float, float], q0: int = 2,
                  tol: float = 0.15, points: Sequence[float] | None = None,
                  weight: WeightField | None = None) -> DecayFit:
    """OLS of ``(log t, log value)`` over the window (or over ``points``)."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    t_min, t_max = map(float, window)
    if not t_min > 0:
        raise ValueError("decay window must start at t_min > 0")
    if points is None:
        sel = (times >= t_min - 1e-12) & (times <= t_max + 1e-12)
    else:
        sel = np.isin(times, np.asarray(points, dtype=float))
    t, y = times[sel], values[sel]
    if t.size < 8:
        raise ValueError(f"decay fit needs >= 8 time points, window has {t.size}")
    wq = math.nan
    if weight is not None:
        qs = (q0 + 1) / q0
        wq = float(norm_lp(Field(weight.grid, weight.values), qs) ** qs)
    if np.any(y <= 0):
        return DecayFit(t_min, t_max, math.nan, math.nan, math.nan, int(t.size), q0, tol,
                        floor_reached=True, weight_qstar=wq)
    X = np.log(t)
    Y = np.log(y)
    slope, intercept = np.polyfit(X, Y, 1)
    resid = Y - (slope * X + intercept)
    return DecayFit(t_min, t_max, float(slope), float(intercept),
                    float(np.sqrt(np.mean(resid ** 2))), int(t.size), q0, tol,
                    weight_qstar=wq)


def fit_decay(stats: EnsembleStats, window: tuple[float, float], q0: int = 2,
              tol: float = 0.15, functional: str = "distance", n_points: int | None = None,
              weight: WeightField | None = None) -> DecayFit:
    """Fit the ensemble mean of ``functional`` to ``C t^slope`` on ``window``.

    With ``n_points`` the fit uses that many log-spaced recorded times instead
    of every recorded time in the window.
    """
    mean = stats[functional].mean
    pts = None if n_points is None else log_spaced_times(stats.times, window, n_points)
    return fit_power_law(stats.times, mean, window, q0, tol, pts, weight)


# ---------------------------------------------------------------- W1


def thin(samples: np.ndarray, size: int) -> np.ndarray:
    """Deterministic thinning of a sorted sample to ``size`` mid-quantiles."""
    s = np.sort(np.asarray(samples, dtype=float))
    if size > s.size:
        raise ValueError("cannot thin to a larger size")
    idx = np.floor((np.arange(size) + 0.5) * s.size / size).astype(int)
    return s[idx]


def wasserstein1(samples_a, samples_b) -> float:
    """W1 between two empirical measures on the real line.

    Equal sizes: mean absolute difference of the sorted samples.  Unequal
    sizes: the larger set is first thinned to the smaller size by taking its
    mid-quantile order statistics (see :func:`thin`).
    """
    a = np.asarray(samples_a, dtype=float).ravel()
    b = np.asarray(samples_b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("wasserstein1 needs nonempty samples")
    m = min(a.size, b.size)
    a = thin(a, m) if a.size > m else np.sort(a)
    b = thin(b, m) if b.size > m else np.sort(b)
    return float(np.mean(np.abs(a - b)))


@dataclass
class W1Report:
    t: float
    w1: float
    n_a: int
    n_b: int
    observable: str = "l1w"


@dataclass
class MixingResult:
    reports: list[W1Report]
    fit: DecayFit | None
    R: int
    master_seed: int
    observable: str
    clamp_events: int = 0

    @property
    def times(self) -> np.ndarray:
        return np.array([r.t for r in self.reports])

    @property
    def values(self) -> np.ndarray:
        return np.array([r.w1 for r in self.reports])


OBSERVABLES = ("l1w", "probe")


def mixing_from_clouds(times, cloud_a: np.ndarray, cloud_b: np.ndarray, t_list,
                       observable: str = "l1w") -> list[W1Report]:
    """W1 per requested time between ``(R, T)`` observable arrays."""
    times = np.asarray(times, dtype=float)
    out = []
    for t in t_list:
        i = int(np.argmin(np.abs(times - t)))
        if abs(times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} was not recorded")
        out.append(W1Report(float(t), wasserstein1(cloud_a[:, i], cloud_b[:, i]),
                            cloud_a.shape[0], cloud_b.shape[0], observable))
    return out


def mixing_distance(theta: Field, theta_tilde: Field, models: Models, t_list, R: int,
                    seed: int, config: SolverConfig, observable: str = "l1w",
                    probe: int = 0, threads: int = 1, record_every: int | None = None,
                    window: tuple[float, float] | None = None, tol: float = 0.2,
                    q0: int | None = None) -> MixingResult:
    """W1 between the laws of an observable started from two initial data.

    Each cloud has ``R`` members with mutually independent noise.  Both clouds
    draw member ``i`` from the same seed stream (common random numbers), which
    leaves each cloud's law unchanged and removes sampling noise from the
    comparison.  ``observable`` is ``"l1w"`` (weighted L1 norm) or
    ``"probe"`` (the value in cell ``probe``).
    """
    if observable not in OBSERVABLES:
        raise ValueError(f"unknown observable {observable!r}; choose from {OBSERVABLES}")
    seeds = member_seeds_for(seed, R)
    clamp = max(resolve_clamp(config, theta.values), resolve_clamp(config, theta_tilde.values))
    cfg = replace(config, clamp=clamp)
    dt = config.dt or auto_dt(theta.grid, models.flux, cfg, clamp)
    t_list = [float(t) for t in t_list]
    if record_every is None:
        record_every = _common_stride(t_list, config.s, dt)
    res = []
    for init in (theta, theta_tilde):
        b = run_batch(init, models, cfg, seeds, threads=threads, record_every=record_every,
                      probe=probe, dt=dt, clamp=clamp)
        res.append(b)
    key = "l1w" if observable == "l1w" else "probe"
    ca, cb = getattr(res[0], key), getattr(res[1], key)
    reports = mixing_from_clouds(res[0].times, ca, cb, t_list, observable)
    fit = None
    if window is not None:
        tt = np.array([r.t for r in reports])
        vv = np.array([r.w1 for r in reports])
        fit = fit_power_law(tt, vv, window, q0 or models.flux.q0, tol)
    clamps = sum(int(b.clamps.sum()) for b in res)
    return MixingResult(reports, fit, R, seed, observable, clamps)


def _common_stride(t_list, s, dt) -> int:
    steps = [step_index(t, dt) - step_index(s, dt) for t in t_list]
    g = 0
    for k in steps:
        g = math.gcd(g, k)
    return max(g, 1)


# ---------------------------------------------------------------- viscosity


@dataclass
class ViscosityReport:
    n_list: list[float]
    D: np.ndarray
    dt: float
    seed: int | None
    clamp_events: int = 0

    @property
    def passed(self) -> bool:
        return bool(np.all(np.diff(self.D) < 0))


def viscosity_study(theta: Field, models: Models, n_list: Sequence[float],
                    config: SolverConfig, seed: int = 0, weight: WeightField | None = None,
                    record_dt: float = 0.01, allow_repeats: bool = False) -> ViscosityReport:
    """Time-averaged ``||u^n - u^{n_max}||_{L1_w}`` for each ``n`` in ``n_list``.

    All runs share one noise path and one time step (the smallest automatic
    step over the list).  The time average is the trapezoidal mean over
    snapshots every ``record_dt``.  ``allow_repeats`` admits a list such as
    ``[m, m]`` (test hook); otherwise ``n_list`` must strictly increase and
    have at least three entries.
    """
    n_list = [float(n) for n in n_list]
    if not allow_repeats:
        if len(n_list) < 3 or any(b <= a for a, b in zip(n_list, n_list[1:])):
            raise ValueError("n_list must strictly increase and have >= 3 entries")
    weight = weight or make_weight(theta.grid)
    clamp = resolve_clamp(config, theta.values)
    cfg0 = replace(config, clamp=clamp)
    if config.dt is not None:
        dt = config.dt
    else:
        dt = min(auto_dt(theta.grid, models.flux, replace(cfg0, n=n), clamp) for n in n_list)
    stride = max(1, round(record_dt / dt))
    path = NoisePath(seed, models.noise.K, dt)
    snaps = []
    clamps = 0
    for n in n_list:
        tr = run(theta, models, path, replace(cfg0, n=n, dt=dt), stride=stride,
                 record_dissipation=False)
        snaps.append(tr.snapshots)
        clamps += tr.clamp_events
    times = tr.times
    ref = snaps[-1]
    w = weight.values
    dV = theta.grid.cell_volume
    D = []
    for sn in snaps:
        dist = np.sum(np.abs(sn - ref) * w, axis=tuple(range(1, sn.ndim))) * dV
        D.append(_time_average(times, dist))
    return ViscosityReport(n_list, np.array(D), dt, seed if not models.noise.is_zero else None,
                           clamps)


def _time_average(times, values) -> float:
    times = np.asarray(times)
    if times[-1] == times[0]:
        return float(values[0])
    values = np.asarray(values, dtype=float)
    area = np.sum(0.5 * (values[1:] + values[:-1]) * np.diff(times))
    return float(area / (times[-1] - times[0]))


# ---------------------------------------------------------------- backward coupling


@dataclass
class BackwardReport:
    """Cauchy differences ``E||eta_{s_{i+1}} - eta_{s_i}||`` at ``|s_{i+1}|``."""

    s_list: list[float]
    mean: np.ndarray
    half_width: np.ndarray
    samples: np.ndarray = field(repr=False)
    fit: DecayFit | None
    R: int
    master_seed: int
    eta: np.ndarray | None = field(default=None, repr=False)
    clamp_events: int = 0

    @property
    def s_abs(self) -> np.ndarray:
        return np.abs(np.asarray(self.s_list[1:], dtype=float))

    @property
    def monotone(self) -> bool:
        """Each difference is at most the previous one plus 2 CI half-widths."""
        m, h = self.mean, self.half_width
        return bool(np.all(m[1:] <= m[:-1] + 2.0 * np.sqrt(h[1:] ** 2 + h[:-1] ** 2)))

    @property
    def passed(self) -> bool:
        return self.monotone and (self.fit is None or self.fit.passed)


def pullback_fields(theta: Field, models: Models, s_list: Sequence[float], config: SolverConfig,
                    seeds: Sequence[int], threads: int = 1) -> tuple[np.ndarray, int]:
    """``eta_s = u_s(0; theta)`` for every seed and every ``s``.

    Every run from ``s`` to 0 uses the same two-sided path of its seed, so all
    starts of one member see one noise realisation.  Returns the fields, shape
    ``(R, len(s), *grid)``, and the total number of clamp events.
    """
    clamp = resolve_clamp(config, theta.values)
    cfg = replace(config, clamp=clamp)
    dt = config.dt or auto_dt(theta.grid, models.flux, cfg, clamp)
    out = np.empty((len(seeds), len(s_list)) + theta.grid.shape)
    clamps = 0
    for j, s in enumerate(s_list):
        c = replace(cfg, s=float(s), t_end=0.0, dt=dt)
        nsteps = step_index(0.0, dt) - step_index(float(s), dt)
        b = run_batch(theta, models, c, list(seeds), threads=threads,
                      record_every=max(nsteps, 1), dt=dt, clamp=clamp)
        out[:, j] = b.terminal
        clamps += int(b.clamps.sum())
    return out, clamps


def backward_coupling(theta: Field, models: Models, s_list: Sequence[float], master_seed: int,
                      config: SolverConfig, R: int = 400, threads: int = 1,
                      weight: WeightField | None = None, tol: float = 0.2,
                      fit: bool = True, allow_repeats: bool = False,
                      keep_fields: bool = False) -> BackwardReport:
    """Pullback Cauchy differences over the start times ``s_list``.

    ``s_list`` must be negative and strictly decreasing (``allow_repeats``
    relaxes this to nonincreasing as a test hook).  The slope of the mean
    difference against ``|s_{i+1}|`` is fitted in log-log when ``fit`` is set
    and at least two differences exist.
    """
    s_list = [float(s) for s in s_list]
    if any(s >= 0 for s in s_list):
        raise ValueError("start times must be negative")
    bad = any(b > a for a, b in zip(s_list, s_list[1:])) if allow_repeats else \
        any(b >= a for a, b in zip(s_list, s_list[1:]))
    if bad or len(s_list) < 2:
        raise ValueError("s_list must be strictly decreasing with >= 2 entries")
    weight = weight or make_weight(theta.grid)
    seeds = member_seeds_for(master_seed, R)
    eta, clamps = pullback_fields(theta, models, s_list, config, seeds, threads)
    w = weight.values
    dV = theta.grid.cell_volume
    axes = tuple(range(2, eta.ndim))
    diffs = np.sum(np.abs(eta[:, 1:] - eta[:, :-1]) * w, axis=axes) * dV
    st = summarize(diffs)
    f = None
    s_abs = np.abs(np.array(s_list[1:]))
    if fit and len(s_abs) >= 2 and np.all(st.mean > 0):
        X, Y = np.log(s_abs), np.log(st.mean)
        slope, intercept = np.polyfit(X, Y, 1)
        resid = Y - (slope * X + intercept)
        q0 = models.flux.q0
        f = DecayFit(float(s_abs[0]), float(s_abs[-1]), float(slope), float(intercept),
                     float(np.sqrt(np.mean(resid ** 2))), int(len(s_abs)), q0, tol)
    return BackwardReport(s_list, st.mean, st.half_width, diffs, f, R, master_seed,
                          eta if keep_fields else None, clamps)


# ---------------------------------------------------------------- CSV writers


def _writer(path):
    fh = Path(path).open("w", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


def write_decay_csv(fits: dict[str, DecayFit], path, seed: int) -> Path:
    fh, wr = _writer(path)
    with fh:
        wr.writerow(["name", "t_min", "t_max", "slope", "intercept", "residual",
                     "bound", "pass", "seed"])
        for name, f in fits.items():
            wr.writerow([name, repr(f.t_min), repr(f.t_max), repr(f.slope), repr(f.intercept),
                         repr(f.residual_rms), repr(f.bound), int(f.passed), seed])
    return Path(path)


def write_w1_csv(reports: Sequence[W1Report], path, R: int, seed: int) -> Path:
    fh, wr = _writer(path)
    with fh:
        wr.writerow(["t", "w1", "R", "seed"])
        for r in reports:
            wr.writerow([repr(r.t), repr(r.w1), R, seed])
    return Path(path)


def write_viscosity_csv(reports: dict[str, ViscosityReport], path, seed: int) -> Path:
    fh, wr = _writer(path)
    with fh:
        wr.writerow(["case", "n", "D_n", "seed"])
        for case, rep in reports.items():
            for n, d in zip(rep.n_list, rep.D):
                wr.writerow([case, repr(n), repr(float(d)), seed])
    return Path(path)


def write_backward_csv(report: BackwardReport, path) -> Path:
    fh, wr = _writer(path)
    with fh:
        wr.writerow(["s", "diff", "ci", "R", "seed"])
        for s, m, h in zip(report.s_list[1:], report.mean, report.half_width):
            wr.writerow([repr(s), repr(float(m)), repr(float(h)), report.R, report.master_seed])
    return Path(path)
