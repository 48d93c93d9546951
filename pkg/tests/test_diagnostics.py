import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import linprog

from conftest import sine
from sclab.diagnostics import (DecayFit, backward_coupling, fit_decay, fit_power_law,
                               log_spaced_times, mixing_distance, thin, viscosity_study,
                               wasserstein1)
from sclab.ensemble import EnsembleStats, FunctionalStats
from sclab.grid import WeightField, make_weight, unit_box
from sclab.models import FluxModel, Models, NoiseModel
from sclab.noise import NoisePath
from sclab.solver import SolverConfig, auto_dt, run


def transport_lp(a, b) -> float:
    """Optimal transport cost |x - y| between uniform empirical measures, by LP."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    n, m = a.size, b.size
    cost = np.abs(a[:, None] - b[None, :]).ravel()
    rows = np.zeros((n, n * m))
    cols = np.zeros((m, n * m))
    for i in range(n):
        rows[i, i * m:(i + 1) * m] = 1
    for j in range(m):
        cols[j, j::m] = 1
    res = linprog(cost, A_eq=np.vstack([rows, cols]),
                  b_eq=np.concatenate([np.full(n, 1 / n), np.full(m, 1 / m)]),
                  bounds=(0, None), method="highs")
    assert res.status == 0
    return float(res.fun)


def _stats(times, mean):
    z = np.zeros_like(mean)
    return EnsembleStats(np.asarray(times), 2, 0, [0, 1],
                         {"distance": FunctionalStats(mean, z, mean, mean)})


def test_fit_exact_power_laws():
    t = np.linspace(1, 20, 50)
    f = fit_decay(_stats(t, t ** -0.5), (1, 20), q0=2)
    assert f.slope == pytest.approx(-0.5, abs=1e-12)
    assert f.residual_rms < 1e-12
    g = fit_decay(_stats(t, 3 * t ** -1.0), (1, 20), q0=2)
    assert g.slope == pytest.approx(-1.0, abs=1e-12)
    assert g.intercept == pytest.approx(math.log(3), abs=1e-12)


def test_fit_reports_constants():
    t = np.linspace(1, 20, 40)
    f = fit_decay(_stats(t, t ** -0.5), (1, 20), q0=2, weight=make_weight(unit_box(1, 50)))
    assert f.q_star == 1.5
    assert f.theoretical_slope == -0.5
    assert f.bound == pytest.approx(-0.35)
    assert f.passed
    assert f.weight_qstar > 0


def test_fit_floor_and_point_count():
    t = np.linspace(1, 20, 40)
    m = t ** -1.0
    m[-1] = 0.0
    f = fit_decay(_stats(t, m), (1, 20))
    assert f.floor_reached and not f.passed
    with pytest.raises(ValueError):
        fit_decay(_stats(t[:5], t[:5] ** -1.0), (1, 20))
    with pytest.raises(ValueError):
        fit_power_law(t, m, (0, 20))


def test_log_spaced_points():
    t = np.round(np.arange(0, 2001) * 0.01, 10)
    pts = log_spaced_times(t, (1, 20), 20)
    assert pts[0] == 1.0 and pts[-1] == 20.0 and pts.size == 20
    assert np.all(np.diff(np.log(pts)) > 0)


def test_weight_scaling_shifts_intercept_only():
    t = np.linspace(1, 20, 30)
    m = 0.7 * t ** -0.6 * (1 + 0.05 * np.sin(t))
    f1 = fit_power_law(t, m, (1, 20))
    f2 = fit_power_law(t, 2 * m, (1, 20))
    assert f2.slope == pytest.approx(f1.slope, abs=1e-12)
    assert f2.intercept - f1.intercept == pytest.approx(math.log(2), abs=1e-12)


def test_w1_examples():
    assert wasserstein1([0, 1], [0, 1]) == 0
    assert wasserstein1([0], [1]) == 1
    assert wasserstein1([0, 0, 1], [0, 1, 1]) == pytest.approx(1 / 3, abs=1e-15)
    assert transport_lp([0, 0, 1], [0, 1, 1]) == pytest.approx(1 / 3, abs=1e-12)
    with pytest.raises(ValueError):
        wasserstein1([], [1])


def test_thinning_deterministic():
    s = np.arange(10.0)[::-1]
    np.testing.assert_array_equal(thin(s, 5), [1, 3, 5, 7, 9])
    assert wasserstein1(np.arange(10.0), np.arange(0.5, 10, 2)) == wasserstein1(
        [1, 3, 5, 7, 9], np.arange(0.5, 10, 2))


samples = st.lists(st.floats(-100, 100), min_size=6, max_size=6)


@given(samples, samples, samples)
def test_w1_metric_properties(a, b, c):
    ab, ba = wasserstein1(a, b), wasserstein1(b, a)
    assert ab == ba and ab >= 0
    assert wasserstein1(a, c) <= ab + wasserstein1(b, c) + 1e-9
    assert (ab == 0) == (sorted(a) == sorted(b))


@given(st.lists(st.integers(-3, 3), min_size=4, max_size=4),
       st.lists(st.integers(-3, 3), min_size=4, max_size=4))
def test_w1_equals_lp(a, b):
    assert wasserstein1(a, b) == pytest.approx(transport_lp(a, b), abs=1e-12)


# ---------------------------------------------------------------- pipelines on small grids

G = unit_box(1, 40)
DET = Models(FluxModel(2, 1), NoiseModel.zero())
NOISY = Models(FluxModel(2, 1), NoiseModel.from_rule(8))


def test_mixing_same_data_is_zero():
    th = sine(G)
    res = mixing_distance(th, th, NOISY, [0.0, 0.1, 0.2], 5, 3,
                          SolverConfig(n=100, t_end=0.2, clamp=3.0))
    assert all(r.w1 == 0 for r in res.reports)


def test_mixing_t0_is_observable_gap():
    a, b = sine(G), sine(G, 0.5)
    w = make_weight(G)
    res = mixing_distance(a, b, NOISY, [0.0, 0.1], 4, 3, SolverConfig(n=100, t_end=0.1,
                                                                        clamp=3.0))
    gap = abs(np.sum(np.abs(a.values) * w.values) - np.sum(np.abs(b.values) * w.values)) / 40
    assert res.reports[0].w1 == pytest.approx(gap, rel=1e-12)


def test_mixing_probe_observable():
    a, b = sine(G), sine(G, 0.5)
    res = mixing_distance(a, b, NOISY, [0.0], 4, 3, SolverConfig(n=100, t_end=0.1, clamp=3.0),
                          observable="probe", probe=20)
    assert res.reports[0].w1 == pytest.approx(abs(a.values[20] - b.values[20]), rel=1e-12)
    with pytest.raises(ValueError):
        mixing_distance(a, b, NOISY, [0.0], 4, 3, SolverConfig(t_end=0.1), observable="sup")


def test_viscosity_degenerate_and_zero():
    cfg = SolverConfig(t_end=0.2, clamp=1.0)
    rep = viscosity_study(sine(G), DET, [100, 100], cfg, allow_repeats=True)
    np.testing.assert_array_equal(rep.D, [0.0, 0.0])
    rep0 = viscosity_study(G.zeros(), DET, [50, 100, 200], cfg)
    np.testing.assert_array_equal(rep0.D, 0.0)
    with pytest.raises(ValueError):
        viscosity_study(sine(G), DET, [100, 50, 200], cfg)


def test_viscosity_first_order_in_inverse_n():
    g = unit_box(1, 200)
    rep = viscosity_study(sine(g, 0.5), DET, [50, 100, 200, 400, 3200],
                          SolverConfig(t_end=0.5, clamp=1.0))
    assert rep.passed
    # against a far-finer reference the gap roughly halves per doubling of n
    ratios = rep.D[:3] / rep.D[1:4]
    assert np.all((ratios > 1.5) & (ratios < 2.6))


def test_backward_repeated_start_gives_zero():
    rep = backward_coupling(sine(G), NOISY, [-0.5, -0.5, -1.0], 4,
                            SolverConfig(n=100, clamp=3.0), R=3, allow_repeats=True, fit=False)
    assert rep.mean[0] == 0.0
    with pytest.raises(ValueError):
        backward_coupling(sine(G), NOISY, [-1.0, -0.5], 4, SolverConfig(clamp=3.0), R=3)


def test_backward_deterministic_matches_direct_runs():
    s_list = [-0.5, -1.0, -2.0]
    cfg = SolverConfig(n=100, clamp=1.0)
    dt = auto_dt(G, DET.flux, cfg, 1.0)
    rep = backward_coupling(sine(G), DET, s_list, 1, cfg, R=2, keep_fields=True, fit=False)
    for j, s in enumerate(s_list):
        tr = run(sine(G), DET, NoisePath(0, 0, dt),
                 SolverConfig(n=100, clamp=1.0, s=s, t_end=0.0, dt=dt))
        np.testing.assert_allclose(rep.eta[0, j], tr.terminal.values, rtol=0, atol=1e-14)
    assert np.all(rep.half_width == 0)
    assert rep.mean[1] < rep.mean[0]


def test_decayfit_pass_flag():
    f = DecayFit(1, 20, -0.4, 0.0, 0.0, 10, 2, 0.15)
    assert f.passed
    assert not DecayFit(1, 20, -0.3, 0.0, 0.0, 10, 2, 0.15).passed


def test_doubled_weight_doubles_norm():
    g = unit_box(1, 30)
    w = make_weight(g)
    w2 = WeightField(g, 2 * w.c0, 2 * w.values)
    u = sine(g).values
    assert np.sum(np.abs(u) * w2.values) == 2 * np.sum(np.abs(u) * w.values)
