import numpy as np
import pytest

from advstab.errors import DimensionError
from advstab.rng import sample_uniform_l2_ball, sample_uniform_linf_ball, stream


def test_replay_is_bit_exact():
    a = stream(1234, 7).standard_normal(100)
    b = stream(1234, 7).standard_normal(100)
    assert np.array_equal(a, b)


def test_distinct_streams_differ():
    a = stream(1234, 0).standard_normal(100)
    b = stream(1234, 1).standard_normal(100)
    assert not np.array_equal(a, b)
    # and nested paths address distinct streams too
    c = stream(1234, 0, 1).standard_normal(100)
    assert not np.array_equal(a, c)


def test_independent_streams_are_uncorrelated():
    a = stream(42, 0).standard_normal(20000)
    b = stream(42, 1).standard_normal(20000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.03


def test_seed_validation():
    with pytest.raises(ValueError):
        stream(-1)
    with pytest.raises(ValueError):
        stream(2**64)


def test_l2_zero_radius_is_zero_vector():
    v = sample_uniform_l2_ball(stream(0, 0), 3, 0.0)
    assert v.shape == (3,)
    assert np.array_equal(v, np.zeros(3))


def test_linf_zero_radius_is_zero_vector():
    v = sample_uniform_linf_ball(stream(0, 0), 5, 0.0)
    assert np.array_equal(v, np.zeros(5))


def test_invalid_dimension_errors():
    with pytest.raises(DimensionError):
        sample_uniform_l2_ball(stream(0, 0), 0, 1.0)
    with pytest.raises(DimensionError):
        sample_uniform_linf_ball(stream(0, 0), 0, 1.0)


def test_negative_radius_errors():
    with pytest.raises(ValueError):
        sample_uniform_l2_ball(stream(0, 0), 2, -0.1)


def test_l2_ball_membership_tight():
    V = sample_uniform_l2_ball(stream(5, 0), 4, 2.5, size=20000)
    assert (np.linalg.norm(V, axis=1) <= 2.5 + 1e-12).all()


def test_linf_ball_membership_exact():
    V = sample_uniform_linf_ball(stream(5, 0), 4, 0.1, size=20000)
    assert (np.abs(V) <= 0.1).all()


def test_l2_monte_carlo_mean_near_origin():
    # symmetry: empirical mean of 1e5 draws stays within 0.02 per coordinate
    V = sample_uniform_l2_ball(stream(7, 0), 2, 1.0, size=100_000)
    assert np.abs(V.mean(axis=0)).max() < 0.02


def test_l2_radial_mass_matches_area_ratio():
    # fraction inside radius 1/2 of the unit disc is (1/2)^2 = 1/4
    V = sample_uniform_l2_ball(stream(7, 0), 2, 1.0, size=100_000)
    frac = (np.linalg.norm(V, axis=1) <= 0.5).mean()
    assert abs(frac - 0.25) < 0.01


def test_linf_monte_carlo_mean():
    V = sample_uniform_linf_ball(stream(3, 0), 1, 2.0, size=100_000)
    assert abs(V.mean()) < 0.03


def test_fixed_draw_count_keeps_streams_aligned():
    # consuming one batched draw equals consuming element draws one by one
    r = stream(11, 0)
    first = sample_uniform_l2_ball(r, 3, 1.0)
    after = r.standard_normal()
    r2 = stream(11, 0)
    sample_uniform_l2_ball(r2, 3, 1.0)
    assert after == r2.standard_normal()
