import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sclab.noise import NoisePath, increment, member_seed, step_index, subpath_from

DELTA = 0.01


def test_empty_interval():
    p = NoisePath(1, 3, DELTA)
    assert increment(p, 2, 0.5, 0.5) == 0.0


def test_two_step_additivity_bit_exact():
    p = NoisePath(11, 2, DELTA)
    for k in (1, 2):
        assert increment(p, k, 0, DELTA) + increment(p, k, DELTA, 2 * DELTA) == \
            increment(p, k, 0, 2 * DELTA)


@given(st.integers(0, 2 ** 64 - 1), st.integers(-500, 500), st.integers(1, 40),
       st.integers(1, 40))
def test_additivity(seed, m0, a, b):
    p = NoisePath(seed, 2, DELTA)
    t0, t1, t2 = m0 * DELTA, (m0 + a) * DELTA, (m0 + a + b) * DELTA
    whole = p.increment(1, t0, t2)
    assert whole == pytest.approx(p.increment(1, t0, t1) + p.increment(1, t1, t2),
                                  rel=1e-12, abs=1e-14)


def test_requery_identical_and_vector_matches_scalar():
    p = NoisePath(5, 4, DELTA)
    v1 = p.increments(-0.3, 0.2)
    v2 = p.increments(-0.3, 0.2)
    np.testing.assert_array_equal(v1, v2)
    np.testing.assert_allclose(v1, [p.increment(k, -0.3, 0.2) for k in range(1, 5)],
                               rtol=1e-13, atol=1e-15)


def test_variance_of_increments():
    p = NoisePath(2024, 1, DELTA)
    z = np.array([p.increment(1, m * DELTA, (m + 1) * DELTA) for m in range(-50_000, 50_000)])
    assert np.var(z) == pytest.approx(DELTA, rel=0.05)
    assert abs(np.mean(z)) < 4 * np.sqrt(DELTA / z.size)


def test_modes_uncorrelated():
    p = NoisePath(77, 2, DELTA)
    rows = np.array([p.increments(m * DELTA, (m + 1) * DELTA) for m in range(10_000)])
    assert abs(np.corrcoef(rows.T)[0, 1]) < 0.05


def test_errors():
    p = NoisePath(1, 2, DELTA)
    with pytest.raises(ValueError):
        p.increment(3, 0, DELTA)
    with pytest.raises(ValueError):
        p.increment(0, 0, DELTA)
    with pytest.raises(ValueError):
        p.increment(1, 0.0, 0.015)
    with pytest.raises(ValueError):
        subpath_from(p, 0.005)
    with pytest.raises(ValueError):
        step_index(0.0001, DELTA)


def test_subpath_views():
    p = NoisePath(9, 3, DELTA)
    assert subpath_from(p, 0.0).increments(0, 0.5).tolist() == p.increments(0, 0.5).tolist()
    a, b = subpath_from(p, -1.0), subpath_from(p, -2.0)
    np.testing.assert_array_equal(a.increments(0, DELTA), p.increments(0, DELTA))
    np.testing.assert_array_equal(a.increments(-1.0, 0.0), b.increments(-1.0, 0.0))
    with pytest.raises(ValueError):
        a.increments(-1.5, 0.0)


def test_member_seeds_distinct():
    seeds = {member_seed(123, i) for i in range(1000)}
    assert len(seeds) == 1000
    assert member_seed(123, 0) == member_seed(123, 0)
