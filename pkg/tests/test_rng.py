import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats as sps

from pidetect import rng


def test_uniform_is_a_pure_function_of_its_key():
    a = rng.uniform(7, np.arange(1000), 3)
    b = rng.uniform(7, np.arange(1000)[::-1], 3)[::-1]
    assert np.array_equal(a, b)
    assert not np.array_equal(a, rng.uniform(8, np.arange(1000), 3))
    assert not np.array_equal(a, rng.uniform(7, np.arange(1000), 4))


def test_uniform_range_and_moments():
    u = rng.uniform(0xCAFE, np.arange(1_000_000), 0)
    assert u.min() > 0 and u.max() < 1
    assert u.mean() == pytest.approx(0.5, abs=3 * (1 / 12) ** 0.5 / 1000)
    assert sps.kstest(u[:200_000], "uniform").pvalue > 0.01


def test_draw_streams_uncorrelated():
    shots = np.arange(200_000)
    u0, u1 = rng.uniform(1, shots, 0), rng.uniform(1, shots, 1)
    assert abs(np.corrcoef(u0, u1)[0, 1]) < 3 / np.sqrt(shots.size)


def test_poisson_matches_inverse_cdf():
    u = rng.uniform(3, np.arange(200_000), 9)
    for mean in (0.0, 0.029, 1.463, 12.0, 75.0):
        assert np.array_equal(rng.poisson(u, mean), sps.poisson.ppf(u, mean).astype(np.int64))


@given(st.floats(0, 60), st.floats(0, 5))
def test_poisson_monotone_in_mean(mean, step):
    u = rng.uniform(11, np.arange(500), 2)
    assert np.all(rng.poisson(u, mean + step) >= rng.poisson(u, mean))


def test_poisson_rejects_bad_means():
    with pytest.raises(ValueError):
        rng.poisson(np.array([0.5]), -1.0)
    with pytest.raises(ValueError):
        rng.poisson(np.array([0.5]), 800.0)


def test_exponential():
    u = rng.uniform(5, np.arange(400_000), 1)
    x = rng.exponential(u, 61e-6)
    assert x.mean() == pytest.approx(61e-6, rel=3 / np.sqrt(u.size))
    assert np.all(rng.exponential(u, 30e-6) <= x)


def test_shot_stream_mirrors_batch():
    s = rng.ShotStream(0xCAFE, 42)
    assert s.uniform(5) == float(rng.uniform(0xCAFE, np.array([42]), 5)[0])
    assert "0xcafe" in repr(s)
