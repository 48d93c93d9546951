"""Experiment pipelines behind the command line.

Each kind has a runner that writes its primary CSVs and an evaluator that
computes the verdicts from those CSVs alone, so re-reading the files always
reproduces ``summary.txt``.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .config import ExperimentConfig
from .diagnostics import (backward_coupling, fit_power_law, log_spaced_times,
                          mixing_distance, mixing_from_clouds, viscosity_study,
                          write_backward_csv, write_decay_csv, write_viscosity_csv,
                          write_w1_csv)
from .ensemble import (PairTemplate, member_seeds_for, read_stats_csv, run_batch,
                       run_coupled_pair, run_ensemble, summarize, write_stats_csv)
from .grid import Field, Grid, make_grid, make_weight, unit_weight
from .kinetic import (XiLattice, chi_pairing, default_battery, kinetic_residual,
                      write_residual_csv)
from .models import FluxModel, Models, NoiseModel, validate_h1, validate_noise
from .noise import NoisePath, member_seed, step_index
from .solver import NumericalAbort, SolverConfig, auto_dt, resolve_clamp, resolve_dt, run

# ---------------------------------------------------------------- results


class ClampAbort(NumericalAbort):
    """The safety clamp engaged; the run cannot be reported."""


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    bound: float
    tol: float

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (f"CHECK {self.name}: {verdict} (value={_num(self.value)}, "
                f"bound={_num(self.bound)}, tol={_num(self.tol)})")


def _num(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return repr(float(x))


@dataclass
class ExperimentResult:
    kind: str
    out_dir: Path
    checks: list[Check] = field(default_factory=list)
    files: list[Path] = field(default_factory=list)
    data: dict = field(default_factory=dict, repr=False)
    abort: str | None = None

    @property
    def passed(self) -> bool:
        return self.abort is None and all(c.passed for c in self.checks)

    @property
    def first_failure(self) -> str | None:
        for c in self.checks:
            if not c.passed:
                return c.name
        return None

    @property
    def exit_code(self) -> int:
        if self.abort is not None:
            return 3
        return 0 if self.passed else 1

    def check(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


# ---------------------------------------------------------------- builders


def build_grid(cfg: ExperimentConfig, cells: int | None = None, dim: int | None = None) -> Grid:
    dim = dim or cfg.dim
    ext = cfg.extents if cfg.extents is not None and dim == cfg.dim else [[0.0, 1.0]] * dim
    return make_grid(dim, [tuple(e) for e in ext], cells or cfg.cells)


def build_models(cfg: ExperimentConfig, q0: int | None = None, noise: bool | None = None,
                 alpha: bool | None = None, dim: int | None = None) -> Models:
    flux = FluxModel(q0 or cfg.q0, dim or cfg.dim, cfg.flux_scale, cfg.experimental)
    use_noise = cfg.noise if noise is None else noise
    if use_noise:
        nm = NoiseModel.from_rule(cfg.K, cfg.coef_rule, cfg.coef_ratio, cfg.coef_exponent,
                                  cfg.sigma, cfg.alpha if alpha is None else alpha)
    else:
        nm = NoiseModel.zero()
    return Models(flux, nm)


def build_solver_config(cfg: ExperimentConfig, **over) -> SolverConfig:
    kw = dict(n=cfg.n, dt=cfg.dt, theta_cfl=cfg.theta_cfl, clamp=cfg.clamp, s=cfg.s,
              t_end=cfg.t_end)
    kw.update(over)
    return SolverConfig(**kw)


def initial_field(grid: Grid, name: str, amp: float, seed: int = 0) -> Field:
    """Named initial data; all vanish on the boundary except ``step`` and ``random``."""
    xs = [(c - a) / (b - a) for c, (a, b) in zip(grid.coordinates(), grid.extents)]
    if name == "sin":
        vals = np.prod([np.sin(np.pi * x) for x in xs], axis=0)
    elif name == "sin2":
        vals = np.prod([np.sin(2 * np.pi * x) for x in xs], axis=0)
    elif name == "zero":
        vals = np.zeros(grid.shape)
    elif name == "step":
        vals = (xs[0] < 0.5).astype(float)
    elif name == "random":
        vals = np.random.default_rng(seed).uniform(-1.0, 1.0, grid.shape)
    else:
        raise ValueError(f"unknown initial datum {name!r}")
    return Field(grid, amp * vals)


def probe_cell(grid: Grid, x: float) -> tuple[int, ...]:
    """Cell containing first coordinate ``x``; middle cell on the other axes."""
    i0 = int(np.argmin(np.abs(grid.axis_centers(0) - x)))
    return (i0,) + tuple(n // 2 for n in grid.cells[1:])


def record_stride(record_dt: float, dt: float) -> int:
    return max(1, int(round(record_dt / dt)))


def _require_no_clamps(count: int, what: str):
    if count:
        raise ClampAbort(f"{what}: the state clamp engaged {count} times")


def _window_inside(cfg: ExperimentConfig) -> bool:
    lo, hi = cfg.window
    return cfg.s <= lo and hi <= cfg.t_end + 1e-12


def _writer(path: Path):
    fh = path.open("w", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


def _read_rows(path: Path) -> list[dict[str, str]]:
    with path.open() as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------- simulate


def run_simulate(cfg: ExperimentConfig, out: Path) -> dict:
    grid = build_grid(cfg)
    models = build_models(cfg)
    theta = initial_field(grid, cfg.initial, cfg.amp, cfg.seed)
    sc = build_solver_config(cfg)
    clamp = resolve_clamp(sc, theta.values)
    dt = resolve_dt(grid, models, sc, clamp)
    path = NoisePath(member_seed(cfg.seed, 0), models.noise.K, cfg.delta or dt)
    tr = run(theta, models, path, replace(sc, dt=dt, clamp=clamp),
             stride=record_stride(cfg.record_dt, dt), record_dissipation=False)
    _require_no_clamps(tr.clamp_events, "simulate")
    coords = [c.ravel() for c in grid.coordinates()]
    names = ["x", "y"][:grid.dim]
    fh, wr = _writer(out / "snapshots.csv")
    with fh:
        wr.writerow(["t", "cell_index"] + names + ["u", "seed"])
        for t, snap in zip(tr.times, tr.snapshots):
            ts = repr(float(t))
            for j, u in enumerate(snap.ravel()):
                wr.writerow([ts, j] + [repr(float(c[j])) for c in coords]
                            + [repr(float(u)), cfg.seed])
    return {"trajectory": tr, "clamp": clamp, "theta_sup": float(np.max(np.abs(theta.values)))}


def eval_simulate(cfg: ExperimentConfig, out: Path) -> list[Check]:
    rows = _read_rows(out / "snapshots.csv")
    u = np.array([float(r["u"]) for r in rows])
    t = np.array([float(r["t"]) for r in rows])
    grid = build_grid(cfg)
    theta = initial_field(grid, cfg.initial, cfg.amp, cfg.seed)
    clamp = resolve_clamp(build_solver_config(cfg), theta.values)
    checks = [Check("sup_below_clamp", bool(np.max(np.abs(u)) < clamp),
                    float(np.max(np.abs(u))), clamp, 0.0)]
    if not cfg.noise:
        u0 = u[t == t[0]]
        hi, lo = max(0.0, float(np.max(u0))), min(0.0, float(np.min(u0)))
        excess = float(max(np.max(u) - hi, lo - np.min(u), 0.0))
        checks.append(Check("maximum_principle", excess <= 1e-12, excess, 0.0, 1e-12))
    return checks


# ---------------------------------------------------------------- contraction


def run_contraction(cfg: ExperimentConfig, out: Path) -> dict:
    if not cfg.noise:
        return _run_deterministic_pairs(cfg, out)
    return _run_coupled_ensemble(cfg, out)


def _run_deterministic_pairs(cfg: ExperimentConfig, out: Path) -> dict:
    grid = build_grid(cfg)
    models = build_models(cfg, noise=False)
    rng = np.random.default_rng(cfg.seed)
    sc = build_solver_config(cfg)
    weight = unit_weight(grid)
    series = []
    fh, wr = _writer(out / "contraction.csv")
    with fh:
        wr.writerow(["pair", "step", "t", "distance", "seed"])
        for p in range(cfg.pairs):
            a = Field(grid, rng.uniform(-cfg.amp, cfg.amp, grid.shape))
            b = Field(grid, rng.uniform(-cfg.amp, cfg.amp, grid.shape))
            clamp = resolve_clamp(sc, np.concatenate([a.values.ravel(), b.values.ravel()]))
            c = replace(sc, clamp=clamp)
            dt = resolve_dt(grid, models, c, clamp)
            pair = run_coupled_pair(a, b, models, NoisePath(0, 0, cfg.delta or dt),
                                    replace(c, dt=dt), weight, record_every=1)
            _require_no_clamps(pair.clamp_events, f"pair {p}")
            series.append(pair.distance)
            for m, (t, d) in enumerate(zip(pair.times, pair.distance)):
                wr.writerow([p, m, repr(float(t)), repr(float(d)), cfg.seed])
    return {"series": series}


def _pair_template(cfg: ExperimentConfig, q0: int | None = None) -> PairTemplate:
    grid = build_grid(cfg)
    models = build_models(cfg, q0=q0)
    theta = initial_field(grid, cfg.initial, cfg.amp, cfg.seed)
    theta_t = initial_field(grid, cfg.initial_tilde, cfg.amp_tilde, cfg.seed + 1)
    return PairTemplate(theta, theta_t, models, build_solver_config(cfg),
                        make_weight(grid, cfg.c0), cfg.delta)


def _default_t_list(cfg: ExperimentConfig, dt: float) -> list[float]:
    """Log-spaced record times inside the fit window."""
    stride = record_stride(cfg.record_dt, dt)
    n = step_index(cfg.t_end, dt) - step_index(cfg.s, dt)
    lattice = cfg.s + np.arange(0, n + 1, stride) * dt
    return [float(t) for t in log_spaced_times(lattice, tuple(cfg.window), cfg.decay_points)]


def _run_coupled_ensemble(cfg: ExperimentConfig, out: Path) -> dict:
    tpl = _pair_template(cfg)
    dt = tpl.dt
    stats = run_ensemble(tpl, cfg.R, cfg.seed, cfg.threads,
                         record_every=record_stride(cfg.record_dt, dt))
    _require_no_clamps(stats.clamp_events, "coupled ensemble")
    write_stats_csv(stats, out / "stats.csv")
    if _window_inside(cfg):
        t_list = cfg.t_list or _default_t_list(cfg, dt)
        reports = mixing_from_clouds(stats.times, stats.samples["norm_u"],
                                     stats.samples["norm_v"], t_list, "l1w")
        write_w1_csv(reports, out / "w1_series.csv", cfg.R, cfg.seed)
    return {"stats": stats, "dt": dt}


def eval_contraction(cfg: ExperimentConfig, out: Path) -> list[Check]:
    if not cfg.noise:
        return _eval_deterministic_pairs(cfg, out)
    table = read_stats_csv(out / "stats.csv")
    d = table["distance"]
    t, mean, hw = d["t"], d["mean"], d["ci_hi"] - d["mean"]
    excess = mean - cfg.ci_factor * hw
    checks = [Check("expected_contraction", bool(np.max(excess) <= mean[0]),
                    float(np.max(excess)), float(mean[0]), cfg.ci_factor)]
    if _window_inside(cfg):
        checks += _decay_checks(cfg, t, mean, out)
        checks += _w1_checks(cfg, out)
    return checks


def _eval_deterministic_pairs(cfg: ExperimentConfig, out: Path) -> list[Check]:
    rows = _read_rows(out / "contraction.csv")
    worst = -math.inf
    for _, grp in itertools.groupby(rows, key=lambda r: r["pair"]):
        d = np.array([float(r["distance"]) for r in grp])
        prev, nxt = d[:-1], d[1:]
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.where(prev > 0, (nxt - prev) / prev, np.where(nxt > 0, np.inf, 0.0))
        if rel.size:
            worst = max(worst, float(np.max(rel)))
    tol = cfg.contraction_tol
    return [Check("l1_contraction_per_step", worst <= tol, worst, 0.0, tol)]


def _decay_checks(cfg: ExperimentConfig, t, mean, out: Path) -> list[Check]:
    pts = log_spaced_times(t, tuple(cfg.window), cfg.decay_points)
    fit = fit_power_law(t, mean, tuple(cfg.window), cfg.q0, cfg.decay_tol, pts)
    write_decay_csv({"distance": fit}, out / "decay_fit.csv", cfg.seed)
    checks = [Check("decay_slope", fit.passed, fit.slope, fit.bound, cfg.decay_tol)]
    lo, hi = cfg.window
    if lo <= 1.0 and 10.0 <= hi:
        i1, i10 = int(np.argmin(np.abs(t - 1.0))), int(np.argmin(np.abs(t - 10.0)))
        if abs(t[i1] - 1.0) < 1e-9 and abs(t[i10] - 10.0) < 1e-9:
            factor = float(mean[i1] / mean[i10]) if mean[i10] > 0 else math.inf
            checks.append(Check("decay_factor_1_to_10", factor >= 2.0, factor, 2.0, 0.0))
    return checks


def _w1_checks(cfg: ExperimentConfig, out: Path) -> list[Check]:
    rows = _read_rows(out / "w1_series.csv")
    t = np.array([float(r["t"]) for r in rows])
    w = np.array([float(r["w1"]) for r in rows])
    checks = []
    if t.size >= 8 and t[0] > 0:
        fit = fit_power_law(t, w, (float(t[0]), float(t[-1])), cfg.q0, cfg.mixing_tol)
        checks.append(Check("w1_slope", fit.passed, fit.slope, fit.bound, cfg.mixing_tol))
    ratio = float(w[-1] / w[0]) if w[0] > 0 else math.inf
    checks.append(Check("w1_ratio", ratio < cfg.mixing_ratio, ratio, cfg.mixing_ratio, 0.0))
    return checks


# ---------------------------------------------------------------- supercontraction


def run_supercontraction(cfg: ExperimentConfig, out: Path) -> dict:
    """Ledger ensembles on a grid and on its refinement, sharing noise paths.

    The noise base step is the fine time step; the coarse run takes two base
    steps per update, so both levels see the same Brownian increments.
    """
    coarse = _pair_template(cfg)
    fine_grid = build_grid(cfg, cells=2 * cfg.cells)
    fine = PairTemplate(initial_field(fine_grid, cfg.initial, cfg.amp, cfg.seed),
                        initial_field(fine_grid, cfg.initial_tilde, cfg.amp_tilde, cfg.seed + 1),
                        coarse.models, coarse.config, make_weight(fine_grid, cfg.c0))
    clamp = max(coarse.clamp, fine.clamp)
    base = replace(coarse.config, clamp=clamp)
    fine_dt = cfg.dt / 2 if cfg.dt else auto_dt(fine_grid, coarse.models.flux, base, clamp)
    levels = {}
    for name, tpl, dt in (("coarse", coarse, 2 * fine_dt), ("fine", fine, fine_dt)):
        tpl = replace(tpl, config=replace(base, dt=dt), delta=fine_dt)
        stats = run_ensemble(tpl, cfg.R, cfg.seed, cfg.threads,
                             record_every=record_stride(cfg.record_dt, dt))
        _require_no_clamps(stats.clamp_events, f"{name} ledger ensemble")
        write_stats_csv(stats, out / f"stats_{name}.csv",
                        ["ledger", "distance", "flux_integral"])
        levels[name] = stats
    return {"levels": levels, "fine_dt": fine_dt}


def ledger_residual(table: dict, ci_factor: float) -> float:
    """Largest excess of the mean ledger over its initial value beyond the CI allowance."""
    L = table["ledger"]
    hw = L["ci_hi"] - L["mean"]
    return float(max(0.0, np.max(L["mean"] - L["mean"][0] - ci_factor * hw)))


def eval_supercontraction(cfg: ExperimentConfig, out: Path) -> list[Check]:
    res = {lv: ledger_residual(read_stats_csv(out / f"stats_{lv}.csv"), cfg.ci_factor)
           for lv in ("coarse", "fine")}
    fh, wr = _writer(out / "ledger.csv")
    with fh:
        wr.writerow(["level", "cells", "residual", "seed"])
        for lv, k in (("coarse", 1), ("fine", 2)):
            wr.writerow([lv, k * cfg.cells, repr(res[lv]), cfg.seed])
    allowance = res["coarse"] / cfg.shrink_factor
    ratio = res["coarse"] / res["fine"] if res["fine"] > 0 else math.inf
    return [
        Check("ledger_closes", res["fine"] <= allowance, res["fine"], allowance,
              cfg.ci_factor),
        Check("ledger_refinement", ratio >= cfg.shrink_factor, ratio, cfg.shrink_factor, 0.0),
    ]


# ---------------------------------------------------------------- mixing


def run_mixing(cfg: ExperimentConfig, out: Path) -> dict:
    tpl = _pair_template(cfg)
    dt = tpl.dt
    t_list = cfg.t_list or _default_t_list(cfg, dt)
    probe = probe_cell(tpl.theta.grid, cfg.probe_x)
    cfg_s = replace(tpl.config, clamp=tpl.clamp, dt=dt)
    res = mixing_distance(tpl.theta, tpl.theta_tilde, tpl.models, t_list, cfg.R, cfg.seed,
                          cfg_s, cfg.observable, probe, cfg.threads)
    _require_no_clamps(res.clamp_events, "mixing clouds")
    write_w1_csv(res.reports, out / "w1_series.csv", cfg.R, cfg.seed)
    return {"mixing": res}


def eval_mixing(cfg: ExperimentConfig, out: Path) -> list[Check]:
    return _w1_checks(cfg, out)


# ---------------------------------------------------------------- invariant


def run_invariant(cfg: ExperimentConfig, out: Path) -> dict:
    grid = build_grid(cfg)
    models = build_models(cfg)
    theta = initial_field(grid, cfg.initial, cfg.amp, cfg.seed)
    s_list = [float(s) for s in cfg.s_list]
    sc = build_solver_config(cfg, s=min(s_list), t_end=0.0)
    rep = backward_coupling(theta, models, s_list, cfg.seed, sc, R=cfg.R, threads=cfg.threads,
                            weight=make_weight(grid, cfg.c0), tol=cfg.backward_tol)
    _require_no_clamps(rep.clamp_events, "backward coupling")
    write_backward_csv(rep, out / "backward.csv")
    return {"backward": rep}


def eval_invariant(cfg: ExperimentConfig, out: Path) -> list[Check]:
    rows = _read_rows(out / "backward.csv")
    s = np.array([float(r["s"]) for r in rows])
    m = np.array([float(r["diff"]) for r in rows])
    h = np.array([float(r["ci"]) for r in rows])
    gap = m[1:] - m[:-1] - cfg.ci_factor * np.sqrt(h[1:] ** 2 + h[:-1] ** 2)
    worst = float(np.max(gap)) if gap.size else -math.inf
    checks = [Check("backward_monotone", worst <= 0.0, worst, 0.0, cfg.ci_factor)]
    bound = -1.0 / cfg.q0 + cfg.backward_tol
    if s.size >= 2 and np.all(m > 0):
        slope = float(np.polyfit(np.log(np.abs(s)), np.log(m), 1)[0])
        checks.append(Check("backward_slope", slope <= bound, slope, bound, cfg.backward_tol))
    else:
        checks.append(Check("backward_slope", False, math.nan, bound, cfg.backward_tol))
    return checks


# ---------------------------------------------------------------- viscosity


def run_viscosity(cfg: ExperimentConfig, out: Path) -> dict:
    grid = build_grid(cfg)
    theta = initial_field(grid, cfg.initial, cfg.amp, cfg.seed)
    sc = build_solver_config(cfg)
    weight = make_weight(grid, cfg.c0)
    cases = {"deterministic": build_models(cfg, noise=False)}
    if cfg.noise:
        cases["stochastic"] = build_models(cfg)
    reports = {}
    for case, models in cases.items():
        rep = viscosity_study(theta, models, cfg.n_list, sc, seed=member_seed(cfg.seed, 0),
                              weight=weight, record_dt=cfg.record_dt)
        _require_no_clamps(rep.clamp_events, f"{case} viscosity study")
        reports[case] = rep
    write_viscosity_csv(reports, out / "viscosity.csv", cfg.seed)

    moments = None
    if cfg.noise:
        moments = _run_moments(cfg, grid, theta, sc, out)
    return {"viscosity": reports, "moments": moments}


def _run_moments(cfg, grid, theta, sc, out: Path) -> dict:
    """Monte Carlo ``E sup_t ||u^n(t)||_p^p`` for each ``n`` on one common step."""
    models = build_models(cfg)
    clamp = resolve_clamp(sc, theta.values)
    base = replace(sc, clamp=clamp)
    dt = sc.dt or min(auto_dt(grid, models.flux, replace(base, n=float(n)), clamp)
                      for n in cfg.moment_n_list)
    seeds = member_seeds_for(cfg.seed, cfg.R)
    rows = {}
    for n in cfg.moment_n_list:
        nsteps = step_index(sc.t_end, dt) - step_index(sc.s, dt)
        b = run_batch(theta, models, replace(base, n=float(n), dt=dt), seeds,
                      threads=cfg.threads, record_every=max(nsteps, 1), dt=dt, clamp=clamp,
                      delta=cfg.delta)
        _require_no_clamps(int(b.clamps.sum()), f"moment run n={n}")
        samples = b.sup_p2 if cfg.moment_p == 2 else b.sup_p4
        st = summarize(samples)
        rows[float(n)] = (float(st.mean[0]), float(st.half_width[0]))
    fh, wr = _writer(out / "moments.csv")
    with fh:
        wr.writerow(["n", "p", "mean", "ci", "R", "seed"])
        for n, (m, h) in rows.items():
            wr.writerow([repr(n), cfg.moment_p, repr(m), repr(h), cfg.R, cfg.seed])
    return rows


def eval_viscosity(cfg: ExperimentConfig, out: Path) -> list[Check]:
    rows = _read_rows(out / "viscosity.csv")
    checks = []
    for case, grp in itertools.groupby(rows, key=lambda r: r["case"]):
        D = np.array([float(r["D_n"]) for r in grp])
        steps = np.diff(D)
        worst = float(np.max(steps))
        checks.append(Check(f"viscosity_cauchy_{case}", bool(np.all(steps < 0)), worst, 0.0,
                            0.0))
    mpath = out / "moments.csv"
    if cfg.noise and mpath.exists():
        mr = _read_rows(mpath)
        m = np.array([float(r["mean"]) for r in mr])
        h = np.array([float(r["ci"]) for r in mr])
        worst = 0.0
        for i, j in itertools.combinations(range(m.size), 2):
            comb = math.sqrt(h[i] ** 2 + h[j] ** 2)
            worst = max(worst, abs(m[i] - m[j]) / comb if comb > 0 else
                        (0.0 if m[i] == m[j] else math.inf))
        checks.append(Check("moment_uniform_in_n", worst < cfg.moment_ci, worst,
                            cfg.moment_ci, 0.0))
    return checks


# ---------------------------------------------------------------- kinetic


def _kinetic_xi_max(cfg: ExperimentConfig) -> float:
    return cfg.xi_max if cfg.xi_max is not None else 1.5 * cfg.kinetic_amp


def run_kinetic(cfg: ExperimentConfig, out: Path) -> dict:
    """Chi identities on random pairs, a zero-trajectory residual and a refinement study.

    The residual runs are one-dimensional and deterministic with a smooth sine
    datum; the time step is ``kinetic_dt_factor * dx`` so that dx, dt and the
    xi spacing halve together.
    """
    xi_max = _kinetic_xi_max(cfg)
    lat = XiLattice(xi_max, cfg.cells)
    rng = np.random.default_rng(cfg.seed)
    u = rng.uniform(-0.99 * xi_max, 0.99 * xi_max, cfg.chi_pairs)
    v = rng.uniform(-0.99 * xi_max, 0.99 * xi_max, cfg.chi_pairs)
    plus, minus = chi_pairing(u, v, lat)
    fh, wr = _writer(out / "chi_identity.csv")
    with fh:
        wr.writerow(["pair", "u", "v", "plus", "minus", "dxi", "seed"])
        for i in range(u.size):
            wr.writerow([i, repr(float(u[i])), repr(float(v[i])), repr(float(plus[i])),
                         repr(float(minus[i])), repr(lat.spacing), cfg.seed])

    rows = []
    levels = [int(N) for N in cfg.kinetic_levels]
    for N in [levels[0]]:
        tr, models = _kinetic_run(cfg, N, zero=True)
        grid = tr.grid
        rep = kinetic_residual(tr, models, default_battery(grid, cfg.s, tr.times[-1], xi_max),
                               xi_max=xi_max, n_xi=N)
        rows += [(name, f"zero-{N}", t.residual) for name, t in zip(rep.names, rep.terms)]
    for N in levels:
        tr, models = _kinetic_run(cfg, N, zero=False)
        rep = kinetic_residual(tr, models, default_battery(tr.grid, cfg.s, tr.times[-1], xi_max),
                               xi_max=xi_max, n_xi=N)
        rows += [(name, str(N), t.residual) for name, t in zip(rep.names, rep.terms)]
    write_residual_csv(rows, out / "kinetic_residual.csv", cfg.seed)
    return {"rows": rows}


def _kinetic_run(cfg: ExperimentConfig, N: int, zero: bool):
    grid = build_grid(cfg, cells=N, dim=1)
    if zero:
        # sigma-only noise: u = 0 stays a fixed point while the path is live
        models = build_models(cfg, noise=True, alpha=False, dim=1)
        theta = grid.zeros()
    else:
        models = build_models(cfg, noise=False, dim=1)
        theta = initial_field(grid, "sin", cfg.kinetic_amp)
    dt = cfg.kinetic_dt_factor * grid.dx[0]
    sc = SolverConfig(n=cfg.kinetic_n, dt=dt, theta_cfl=cfg.theta_cfl,
                      clamp=2.0 * cfg.kinetic_amp, s=cfg.s, t_end=cfg.s + cfg.kinetic_t_end)
    path = NoisePath(member_seed(cfg.seed, 0), models.noise.K, dt)
    tr = run(theta, models, path, sc, stride=1, record_dissipation=False)
    _require_no_clamps(tr.clamp_events, f"kinetic run N={N}")
    return tr, models


def kinetic_order(rows: list[dict[str, str]]) -> float:
    """Least-squares slope of log(max residual) against log(1/N) over the levels."""
    by_level: dict[int, float] = {}
    for r in rows:
        if r["resolution"].isdigit():
            N = int(r["resolution"])
            by_level[N] = max(by_level.get(N, 0.0), abs(float(r["residual"])))
    N = np.array(sorted(by_level), dtype=float)
    R = np.array([by_level[int(n)] for n in N])
    if N.size < 2 or np.any(R <= 0):
        return math.nan
    return float(np.polyfit(np.log(1.0 / N), np.log(R), 1)[0])


def eval_kinetic(cfg: ExperimentConfig, out: Path) -> list[Check]:
    chi = _read_rows(out / "chi_identity.csv")
    u = np.array([float(r["u"]) for r in chi])
    v = np.array([float(r["v"]) for r in chi])
    plus = np.array([float(r["plus"]) for r in chi])
    minus = np.array([float(r["minus"]) for r in chi])
    dxi = float(chi[0]["dxi"])
    err = max(np.max(np.abs(plus - np.maximum(u - v, 0))),
              np.max(np.abs(minus - np.maximum(v - u, 0)))) / dxi
    rows = _read_rows(out / "kinetic_residual.csv")
    zero = max(abs(float(r["residual"])) for r in rows if r["resolution"].startswith("zero"))
    order = kinetic_order(rows)
    return [
        Check("chi_identity", bool(err <= 1.0), float(err), 1.0, dxi),
        Check("kinetic_zero_residual", zero <= cfg.zero_tol, zero, cfg.zero_tol, 0.0),
        Check("kinetic_order", bool(order >= cfg.kinetic_order), order, cfg.kinetic_order, 0.0),
    ]


# ---------------------------------------------------------------- hypotheses


def run_hypotheses(cfg: ExperimentConfig, out: Path) -> dict:
    grid = build_grid(cfg)
    models = build_models(cfg, noise=True)
    h1 = validate_h1(models.flux, tuple(cfg.sample_range), cfg.n_samples)
    nz = validate_noise(models.noise, grid, tuple(cfg.sample_range), max(cfg.n_samples, 100),
                        seed=cfg.seed)
    w = make_weight(grid, cfg.c0)
    fh, wr = _writer(out / "hypotheses.csv")
    with fh:
        wr.writerow(["report", "quantity", "value", "seed"])
        for rep in (h1, nz):
            for k, val in rep.constants.items():
                wr.writerow([rep.name, k, repr(float(val)), cfg.seed])
            for k, val in rep.violations.items():
                wr.writerow([rep.name, f"violation_{k}", repr(float(val)), cfg.seed])
        wr.writerow(["weight", "min_w", repr(float(np.min(w.values))), cfg.seed])
    return {"h1": h1, "noise": nz}


def eval_hypotheses(cfg: ExperimentConfig, out: Path) -> list[Check]:
    vals = {(r["report"], r["quantity"]): float(r["value"])
            for r in _read_rows(out / "hypotheses.csv")}
    coer = vals[("H1", "coercivity_empirical")]
    closed = vals[("H1", "coercivity_closed_form")]
    tol = 1e-9
    odd = vals[("H1", "violation_oddness")]
    mono = vals[("H1", "violation_monotonicity")]
    h4 = vals[("noise", "violation_H4_bound_ratio_minus_1")]
    budget = vals[("noise", "sum_Ck2")]
    minw = vals[("weight", "min_w")]
    return [
        Check("h1_coercivity", coer >= closed - tol, coer, closed, tol),
        Check("h1_oddness", odd == 0.0, odd, 0.0, 0.0),
        Check("h1_monotonicity", mono == 0.0, mono, 0.0, 0.0),
        Check("noise_mode_bound", h4 <= 1e-12, h4, 0.0, 1e-12),
        Check("noise_budget_finite", math.isfinite(budget), budget, math.inf, 0.0),
        Check("weight_positive", minw > 0, minw, 0.0, 0.0),
    ]


# ---------------------------------------------------------------- dispatch

PIPELINES: dict[str, tuple[Callable, Callable]] = {
    "simulate": (run_simulate, eval_simulate),
    "contraction": (run_contraction, eval_contraction),
    "supercontraction": (run_supercontraction, eval_supercontraction),
    "mixing": (run_mixing, eval_mixing),
    "invariant": (run_invariant, eval_invariant),
    "viscosity": (run_viscosity, eval_viscosity),
    "kinetic-check": (run_kinetic, eval_kinetic),
    "validate-hypotheses": (run_hypotheses, eval_hypotheses),
}


def evaluate(cfg: ExperimentConfig, out: Path | None = None) -> list[Check]:
    """Verdicts recomputed from the CSVs already in ``out``."""
    return PIPELINES[cfg.kind][1](cfg, Path(out or cfg.out_dir))


def summary_lines(cfg: ExperimentConfig, checks: list[Check], abort: str | None) -> list[str]:
    lines = [f"kind: {cfg.kind}", f"seed: {cfg.seed}"]
    lines += [c.line() for c in checks]
    if abort is not None:
        lines.append(f"ABORT: {abort}")
        lines.append("RESULT: ABORT")
    else:
        failed = [c.name for c in checks if not c.passed]
        lines.append(f"RESULT: FAIL (first failing check: {failed[0]})" if failed
                     else "RESULT: PASS")
    return lines


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run the pipeline for ``cfg.kind`` and write every artifact into ``cfg.out``.

    Numerical aborts (non-finite states, clamp events) are reported in
    ``summary.txt`` and give exit code 3; configuration problems surface as
    exceptions for the caller.
    """
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(cfg.to_json())
    runner, evaluator = PIPELINES[cfg.kind]
    result = ExperimentResult(cfg.kind, out)
    try:
        result.data = runner(cfg, out)
        result.checks = evaluator(cfg, out)
    except NumericalAbort as exc:
        result.abort = str(exc)
    (out / "summary.txt").write_text("\n".join(summary_lines(cfg, result.checks,
                                                             result.abort)) + "\n")
    result.files = sorted(p for p in out.iterdir() if p.is_file())
    return result
