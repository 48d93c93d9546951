import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import sine
from sclab.ensemble import (PairTemplate, read_stats_csv, run_batch, run_coupled_pair,
                            run_ensemble, summarize, write_stats_csv)
from sclab.grid import Field, make_weight, norm_l1w, unit_box
from sclab.models import FluxModel, Models, NoiseModel
from sclab.noise import NoisePath
from sclab.solver import SolverConfig, run

CFG = SolverConfig(n=100, t_end=0.3, clamp=3.0)


@pytest.fixture
def grid():
    return unit_box(1, 40)


def test_equal_data_zero_distance(grid, burgers_noisy):
    th = sine(grid)
    dt = PairTemplate(th, th, burgers_noisy, CFG).dt
    pair = run_coupled_pair(th, th, burgers_noisy, NoisePath(5, 8, dt), CFG)
    assert np.all(pair.distance == 0) and np.all(pair.flux_integral == 0)


def test_pair_matches_independent_runs(grid, burgers_noisy):
    a, b = sine(grid), sine(grid, 0.5)
    w = make_weight(grid)
    tpl = PairTemplate(a, b, burgers_noisy, CFG, w)
    path = NoisePath(5, 8, tpl.dt)
    pair = run_coupled_pair(a, b, burgers_noisy, path, CFG, w)
    ua = run(a, burgers_noisy, path, CFG).snapshots
    ub = run(b, burgers_noisy, path, CFG).snapshots
    d = [norm_l1w(Field(grid, x - y), w) for x, y in zip(ua, ub)]
    np.testing.assert_allclose(pair.distance, d, rtol=1e-12, atol=1e-15)
    assert np.all(pair.distance >= 0)


def test_deterministic_pair_nonincreasing(grid, burgers_det):
    rng = np.random.default_rng(0)
    a = Field(grid, rng.uniform(-1, 1, 40))
    b = Field(grid, rng.uniform(-1, 1, 40))
    cfg = SolverConfig(n=100, dt=1e-3, t_end=0.3, clamp=1.0)
    pair = run_coupled_pair(a, b, burgers_det, NoisePath(0, 0, 1e-3), cfg)
    assert np.all(np.diff(pair.distance) <= 1e-12 * pair.distance[:-1])


def test_zero_flux_no_viscosity_keeps_distance(grid):
    models = Models(FluxModel(2, 1, scale=0.0), NoiseModel.zero())
    cfg = SolverConfig(n=np.inf, dt=1e-3, t_end=0.2, clamp=1.0)
    pair = run_coupled_pair(sine(grid), sine(grid, 0.3), models, NoisePath(0, 0, 1e-3), cfg)
    assert np.all(pair.distance == pair.distance[0])


def test_identical_seeds_zero_variance(grid, burgers_noisy):
    tpl = PairTemplate(sine(grid), sine(grid, 0.5), burgers_noisy, CFG)
    st_ = run_ensemble(tpl, 2, 0, member_seeds=[7, 7], record_every=50)
    assert np.all(st_["distance"].stderr == 0)


def test_deterministic_ensemble_matches_single(grid, burgers_det):
    tpl = PairTemplate(sine(grid), sine(grid, 0.5), burgers_det, CFG)
    st_ = run_ensemble(tpl, 3, 1, record_every=1)
    pair = run_coupled_pair(sine(grid), sine(grid, 0.5), burgers_det,
                            NoisePath(0, 0, tpl.dt), CFG)
    for member in st_.samples["distance"]:
        np.testing.assert_array_equal(member, pair.distance)
    np.testing.assert_allclose(st_["distance"].mean, pair.distance, rtol=1e-15)
    # identical members; only the rounding inside np.std is left
    assert np.all(st_["distance"].stderr <= 1e-15 * pair.distance)


def test_thread_count_does_not_change_results(grid, burgers_noisy):
    tpl = PairTemplate(sine(grid), sine(grid, 0.5), burgers_noisy, CFG)
    ref = run_ensemble(tpl, 7, 3, threads=1, record_every=40)
    for t in (2, 3, 8):
        other = run_ensemble(tpl, 7, 3, threads=t, record_every=40)
        for k in ref.samples:
            assert np.array_equal(ref.samples[k], other.samples[k])


def test_ci_scaling_with_R(grid, burgers_noisy):
    tpl = PairTemplate(sine(grid), sine(grid, 0.5), burgers_noisy,
                       SolverConfig(n=100, t_end=0.5, clamp=3.0))
    h100 = run_ensemble(tpl, 100, 10, record_every=600)["norm_u"].half_width[-1]
    h400 = run_ensemble(tpl, 400, 11, record_every=600)["norm_u"].half_width[-1]
    assert h400 / h100 == pytest.approx(0.5, rel=0.2)


def test_summarize_oracle():
    x = np.array([[1.0, 2.0], [3.0, 6.0], [5.0, 1.0]])
    s = summarize(x)
    np.testing.assert_allclose(s.mean, [3.0, 3.0])
    se = np.array([2.0, np.std([2, 6, 1], ddof=1)]) / np.sqrt(3)
    np.testing.assert_allclose(s.stderr, se)
    np.testing.assert_allclose(s.half_width, 1.96 * se)
    with pytest.raises(ValueError):
        summarize(np.ones((1, 3)))


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=50))
def test_ci_contains_mean(xs):
    s = summarize(np.array(xs))
    assert s.ci_lo[0] <= s.mean[0] <= s.ci_hi[0]


def test_ensemble_rejects_small_R(grid, burgers_noisy):
    tpl = PairTemplate(sine(grid), sine(grid, 0.5), burgers_noisy, CFG)
    with pytest.raises(ValueError):
        run_ensemble(tpl, 1, 0)


def test_mismatched_grids_rejected(burgers_noisy):
    with pytest.raises(ValueError):
        PairTemplate(sine(unit_box(1, 10)), sine(unit_box(1, 12)), burgers_noisy, CFG)


def test_stats_csv_roundtrip(tmp_path, grid, burgers_noisy):
    tpl = PairTemplate(sine(grid), sine(grid, 0.5), burgers_noisy, CFG)
    st_ = run_ensemble(tpl, 5, 4, record_every=60)
    p = write_stats_csv(st_, tmp_path / "stats.csv")
    header = p.read_text().splitlines()[0]
    assert header == "t,functional_name,mean,stderr,ci_lo,ci_hi,R,seed"
    back = read_stats_csv(p)
    for name, f in st_.functionals.items():
        assert np.array_equal(back[name]["mean"], f.mean)
        assert np.array_equal(back[name]["ci_hi"], f.ci_hi)
        assert np.array_equal(back[name]["t"], st_.times)
        assert np.all(back[name]["seed"] == 4)


def test_batch_matches_run(grid, burgers_noisy):
    th = sine(grid)
    b = run_batch(th, burgers_noisy, CFG, [21, 22], record_every=1)
    tr = run(th, burgers_noisy, NoisePath(22, 8, b.dt), CFG)
    np.testing.assert_array_equal(b.terminal[1], tr.snapshots[-1])
    w = make_weight(grid)
    np.testing.assert_allclose(b.l1w[1], [norm_l1w(Field(grid, s), w) for s in tr.snapshots],
                               rtol=1e-12)
