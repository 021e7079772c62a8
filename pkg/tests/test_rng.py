import numpy as np
import pytest

from tinet.rng import as_rng, make_rng, normal, uniform


def test_streams_are_reproducible_and_distinct():
    a = uniform(make_rng(3, 1, 2), 5)
    assert np.array_equal(a, uniform(make_rng(3, 1, 2), 5))
    assert not np.array_equal(a, uniform(make_rng(3, 2, 1), 5))


def test_negative_seed_rejected():
    with pytest.raises(ValueError):
        make_rng(-1)


def test_as_rng_passes_generators_through():
    g = make_rng(0)
    assert as_rng(g) is g


def test_box_muller_pairs():
    # z0 = r cos(2 pi u2), z1 = r sin(2 pi u2), r = sqrt(-2 log(1 - u1))
    u = make_rng(9).random(2)
    r = np.sqrt(-2.0 * np.log(1.0 - u[0]))
    expected = [r * np.cos(2 * np.pi * u[1]), r * np.sin(2 * np.pi * u[1])]
    np.testing.assert_allclose(normal(make_rng(9), 2), expected, rtol=1e-14)


def test_normal_moments():
    z = normal(make_rng(1), 200_001)
    assert z.shape == (200_001,)
    assert abs(z.mean()) < 0.01
    assert abs(z.std() - 1) < 0.01
