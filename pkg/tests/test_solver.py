import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import sine
from sclab.ensemble import run_batch_fields
from sclab.grid import Field, make_grid, norm_l1, unit_box
from sclab.models import FluxModel, Models, NoiseModel
from sclab.noise import NoisePath, subpath_from
from sclab.solver import (CFLViolation, NumericalAbort, SolverConfig, auto_dt, cfl_dt,
                          dissipation_density, run, step)


def test_cfl_example():
    g = make_grid(1, (0, 1), 100)
    dt = cfl_dt(g, FluxModel(2, 1), SolverConfig(n=100, theta_cfl=0.5), 2.0)
    assert dt == pytest.approx(0.5 * 0.01 / 12, rel=1e-14)


def test_cfl_diffusive_limit():
    g = make_grid(1, (0, 1), 100)
    dt = cfl_dt(g, FluxModel(2, 1, scale=0.0), SolverConfig(n=100, theta_cfl=0.5), 1.0)
    assert dt == pytest.approx(0.5 * 1e-4 * 100 / 2, rel=1e-14)


def test_cfl_transport_branch_theta_one():
    g = make_grid(1, (0, 1), 100)
    dt = cfl_dt(g, FluxModel(2, 1), SolverConfig(n=1e6, theta_cfl=1.0), 2.0)
    assert dt == pytest.approx(0.01 / 12, rel=1e-14)


def test_auto_dt_is_on_hundredths_lattice():
    g = unit_box(1, 200)
    dt = auto_dt(g, FluxModel(2, 1), SolverConfig(n=200), 3.0)
    N = round(1 / dt)
    assert N % 100 == 0 and dt <= cfl_dt(g, FluxModel(2, 1), SolverConfig(n=200), 3.0)


def test_config_rejections(grid100, burgers_det):
    with pytest.raises(ValueError):
        SolverConfig(t_end=0.0, s=1.0)
    with pytest.raises(ValueError):
        SolverConfig(theta_cfl=1.5)
    th = sine(grid100)
    with pytest.raises(CFLViolation):
        run(th, burgers_det, NoisePath(0, 0, 0.1), SolverConfig(dt=0.1, clamp=1.0))
    with pytest.raises(ValueError, match="multiple"):
        run(th, burgers_det, NoisePath(0, 0, 0.0003), SolverConfig(dt=0.0005, clamp=1.0))


def test_zero_is_fixed_point_without_spatial_noise(grid100):
    models = Models(FluxModel(2, 1), NoiseModel.from_rule(8, alpha=False))
    cfg = SolverConfig(n=100, dt=1 / 2000, t_end=0.5, clamp=1.0)
    tr = run(grid100.zeros(), models, NoisePath(4, 8, 1 / 2000), cfg)
    assert np.all(tr.snapshots == 0)


def test_zero_noise_zero_initial(grid100, burgers_det):
    tr = run(grid100.zeros(), burgers_det, NoisePath(0, 0, 1e-3),
             SolverConfig(dt=1e-3, t_end=0.2, clamp=1.0))
    assert np.all(tr.snapshots == 0)


def test_empty_evolution(grid100, burgers_noisy):
    th = sine(grid100)
    tr = run(th, burgers_noisy, NoisePath(0, 8, 1e-4),
             SolverConfig(s=0.3, t_end=0.3, clamp=3.0, dt=1e-4))
    assert tr.times.tolist() == [0.3]
    np.testing.assert_array_equal(tr.snapshots[0], th.values)


def test_trajectory_times(grid100, burgers_noisy):
    cfg = SolverConfig(s=-0.2, t_end=0.3, clamp=3.0)
    dt = auto_dt(grid100, burgers_noisy.flux, cfg, 3.0)
    tr = run(sine(grid100), burgers_noisy, NoisePath(0, 8, dt), cfg, stride=7)
    assert tr.times[0] == -0.2 and tr.times[-1] == 0.3
    assert np.all(np.diff(tr.times) > 0)


def test_step_matches_run(grid100, burgers_noisy):
    cfg = SolverConfig(t_end=0.05, clamp=3.0)
    dt = auto_dt(grid100, burgers_noisy.flux, cfg, 3.0)
    path = NoisePath(3, 8, dt)
    th = sine(grid100)
    tr = run(th, burgers_noisy, path, replace(cfg, t_end=2 * dt))
    u = step(th, burgers_noisy.flux, burgers_noisy.noise, path, 0.0, dt, cfg)
    u = step(u, burgers_noisy.flux, burgers_noisy.noise, path, dt, dt, cfg)
    np.testing.assert_array_equal(u.values, tr.snapshots[-1])


def test_one_step_is_second_order_local():
    """A single step matches a fine-substep reference up to O(dt^2)."""
    g = unit_box(1, 400)
    models = Models(FluxModel(2, 1), NoiseModel.zero())
    th = sine(g, 0.5)
    errs = []
    for dt in (4e-4, 2e-4, 1e-4):
        cfg = SolverConfig(n=200, dt=dt, clamp=1.0, t_end=dt)
        one = run(th, models, NoisePath(0, 0, dt), cfg).snapshots[-1]
        fine = run(th, models, NoisePath(0, 0, dt / 64), replace(cfg, dt=dt / 64)).snapshots[-1]
        errs.append(np.max(np.abs(one - fine)))
    assert errs[0] / errs[1] > 3.0 and errs[1] / errs[2] > 3.0


def test_riemann_shock_speed():
    g = make_grid(1, (-1, 1), 800)
    models = Models(FluxModel(2, 1), NoiseModel.zero())
    th = g.field(lambda x: (x < 0).astype(float))
    tr = run(th, models, NoisePath(0, 0, 1e-4), SolverConfig(n=1e4, dt=1e-4, t_end=0.2, clamp=1.0))
    u = tr.snapshots[-1]
    x = g.axis_centers(0)
    right = x > 0
    front = x[right][np.argmin(np.abs(u[right] - 0.5))]
    assert abs(front - 0.2) <= 2 * g.dx[0]


def test_restart_is_bit_identical(grid100, burgers_noisy):
    cfg = SolverConfig(t_end=1.0, clamp=3.0)
    dt = auto_dt(grid100, burgers_noisy.flux, cfg, 3.0)
    path = NoisePath(99, 8, dt)
    th = sine(grid100)
    full = run(th, burgers_noisy, path, cfg)
    half = run(th, burgers_noisy, path, replace(cfg, t_end=0.5))
    rest = run(half.terminal, burgers_noisy, subpath_from(path, 0.5),
               replace(cfg, s=0.5, t_end=1.0))
    assert np.array_equal(full.terminal.values, rest.terminal.values)


def test_nan_aborts_with_seed():
    g = unit_box(1, 20)
    models = Models(FluxModel(2, 1), NoiseModel.from_rule(2))
    init = np.zeros((2, 20))
    init[1, 5] = np.nan
    with pytest.raises(NumericalAbort, match="seed=12"):
        run_batch_fields(g, init, models, SolverConfig(t_end=0.01, clamp=2.0), [11, 12],
                         clamp=2.0)


def test_clamp_counts_events(grid100):
    models = Models(FluxModel(2, 1), NoiseModel.from_rule(8, ratio=0.9))
    cfg = SolverConfig(t_end=0.2, clamp=1.0)
    dt = auto_dt(grid100, models.flux, cfg, 1.0)
    tr = run(sine(grid100), models, NoisePath(1, 8, dt), cfg)
    assert tr.clamp_events > 0
    assert np.max(np.abs(tr.snapshots)) <= 1.0


def test_dissipation_matches_density(grid100, burgers_det):
    cfg = SolverConfig(n=50, t_end=0.02, clamp=1.0)
    dt = auto_dt(grid100, burgers_det.flux, cfg, 1.0)
    tr = run(sine(grid100), burgers_det, NoisePath(0, 0, dt), cfg)
    expect = sum(dissipation_density(s, grid100, cfg.nu) for s in tr.snapshots[:-1]) * dt
    np.testing.assert_allclose(tr.dissipation, expect, rtol=1e-12, atol=1e-15)


def test_two_dimensional_run_symmetric():
    g = unit_box(2, 24)
    models = Models(FluxModel(2, 2), NoiseModel.zero())
    th = g.field(lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
    tr = run(th, models, NoisePath(0, 0, 1e-3), SolverConfig(n=50, dt=1e-3, t_end=0.1, clamp=1.0))
    u = tr.snapshots[-1]
    # the flux is symmetric in the two axes, so the solution is too
    np.testing.assert_allclose(u, u.T, atol=1e-14)
    assert np.max(np.abs(u)) <= 1.0


# ---------------------------------------------------------------- monotone-scheme properties

data = arrays(np.float64, 30, elements=st.floats(-1, 1))


def _det_run(vals, n=100.0, t_end=0.05):
    g = unit_box(1, 30)
    models = Models(FluxModel(2, 1), NoiseModel.zero())
    return run(Field(g, vals), models, NoisePath(0, 0, 1e-3),
               SolverConfig(n=n, dt=1e-3, t_end=t_end, clamp=1.0), stride=1)


@given(data, arrays(np.float64, 30, elements=st.floats(0, 1)))
def test_comparison_principle(a, bump):
    b = np.minimum(a + bump, 1.0)
    ua, ub = _det_run(a).snapshots, _det_run(b).snapshots
    assert np.all(ua <= ub + 1e-15)


@given(data)
def test_maximum_principle(a):
    u = _det_run(a).snapshots
    assert np.all(u <= max(0.0, a.max()) + 1e-15)
    assert np.all(u >= min(0.0, a.min()) - 1e-15)


@given(data, data)
def test_l1_contraction_every_step(a, b):
    ua, ub = _det_run(a).snapshots, _det_run(b).snapshots
    g = unit_box(1, 30)
    d = np.array([norm_l1(Field(g, x - y)) for x, y in zip(ua, ub)])
    # absolute slack: a few ulps of O(1) cell values per cell, times dx
    ulp_floor = 8 * np.finfo(float).eps * max(np.abs(a).max(), np.abs(b).max(), 1e-300)
    assert np.all(d[1:] <= d[:-1] * (1 + 1e-12) + ulp_floor)
    assert math.isfinite(d[-1])
