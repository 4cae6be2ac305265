import math

import numpy as np
import pytest

from iddm import (
    HazeParams,
    haze_at_step,
    haze_increment,
    haze_total,
    haze_total_quadrature,
    synthesize_hazy,
    transmission,
)


def _d(value, shape=(2, 2)):
    return np.full(shape, float(value))


def test_haze_params_validation():
    with pytest.raises(ValueError):
        HazeParams(airlight=1.0, scattering=0.0)
    with pytest.raises(ValueError):
        HazeParams(airlight=0.0, scattering=1.0)
    with pytest.raises(ValueError):
        HazeParams(airlight=2.5, scattering=1.0)
    with pytest.raises(ValueError):
        HazeParams(airlight=(0.5, 0.5), scattering=1.0)  # not length 1 or 3
    HazeParams(airlight=(0.7, 0.8, 0.9), scattering=0.4)


def test_transmission_values():
    assert transmission(_d(0.0), 1.0)[0, 0, 0] == 1.0
    np.testing.assert_allclose(transmission(_d(2.0), 0.5), math.exp(-1.0))
    np.testing.assert_allclose(transmission(_d(1.0), 1.5), math.exp(-1.5))
    with pytest.raises(ValueError):
        transmission(_d(1.0), 0.0)
    with pytest.raises(ValueError):
        transmission(np.full((2, 2), -1.0), 1.0)


def test_haze_total_closed_form():
    p = HazeParams(airlight=1.0, scattering=1.0)
    assert np.all(haze_total(_d(0.0), p) == 0.0)
    # saturation toward A/sigma at large depth
    assert abs(haze_total(_d(50.0), p)[0, 0, 0] - 1.0) < 1e-20

    p = HazeParams(airlight=0.8, scattering=0.5)
    got = haze_total(_d(2.0), p)[0, 0, 0]
    assert abs(got - 1.6 * (1.0 - math.exp(-1.0))) < 1e-12
    # frozen from the quadrature oracle (1e6 panels): 1.0113928941
    assert abs(got - haze_total_quadrature(2.0, 0.8, 0.5)) <= 1e-8 * got
    assert abs(got - 1.0113929) < 1e-6


def test_haze_total_matches_quadrature_oracle():
    rng = np.random.default_rng(0)
    for _ in range(8):
        a = float(rng.uniform(0.7, 1.0))
        sig = float(rng.uniform(0.4, 1.5))
        z = float(rng.uniform(0.05, 1.0))
        closed = haze_total(_d(z, (1, 1)), HazeParams(a, sig))[0, 0, 0]
        quad = haze_total_quadrature(z, a, sig, panels=200_000)
        assert abs(closed - quad) <= 1e-8 * abs(quad)


def test_haze_at_step_endpoints_and_value():
    p = HazeParams(airlight=1.0, scattering=1.0)
    d = _d(1.0)
    assert np.all(haze_at_step(d, p, 0, 1000) == 0.0)
    np.testing.assert_array_equal(haze_at_step(d, p, 1000, 1000), haze_total(d, p))
    got = haze_at_step(d, p, 500, 1000)[0, 0, 0]
    assert abs(got - (1.0 - math.exp(-0.5))) < 1e-12
    assert abs(got - 0.3934693) < 1e-6
    with pytest.raises(ValueError):
        haze_at_step(d, p, 1001, 1000)


def test_haze_increment_value_and_positivity():
    p = HazeParams(airlight=1.0, scattering=1.0)
    assert np.all(haze_increment(_d(0.0), p, 1, 10) == 0.0)
    got = haze_increment(_d(1.0), p, 1, 2)[0, 0, 0]
    assert abs(got - (1.0 - math.exp(-0.5))) < 1e-12
    with pytest.raises(ValueError):
        haze_increment(_d(1.0), p, 0, 2)

    rng = np.random.default_rng(1)
    depth = rng.uniform(0, 1, size=(4, 4))
    for t in range(1, 11):
        assert np.all(haze_increment(depth, p, t, 10) >= 0)


@pytest.mark.parametrize("T", [1, 10, 1000])
def test_haze_telescoping(T):
    rng = np.random.default_rng(T)
    p = HazeParams(
        airlight=float(rng.uniform(0.7, 1.0)), scattering=float(rng.uniform(0.4, 1.5))
    )
    depth = rng.uniform(0, 1, size=(8, 8))
    total = sum(haze_increment(depth, p, t, T) for t in range(1, T + 1))
    assert np.abs(total - haze_total(depth, p)).max() <= 1e-6


def test_haze_monotone_in_t():
    rng = np.random.default_rng(2)
    p = HazeParams(airlight=0.9, scattering=1.2)
    depth = rng.uniform(0, 1, size=(4, 4))
    prev = haze_at_step(depth, p, 0, 50)
    for t in range(1, 51):
        cur = haze_at_step(depth, p, t, 50)
        assert np.all(cur >= prev)
        prev = cur


def test_synthesize_hazy_decomposition():
    rng = np.random.default_rng(3)
    clear = rng.uniform(0, 1, size=(6, 6, 3))
    depth = rng.uniform(0, 1, size=(6, 6))
    p = HazeParams(airlight=0.85, scattering=1.1)
    dec = synthesize_hazy(clear, depth, p)
    # identity holds exactly by construction
    np.testing.assert_array_equal(dec.hazy, dec.attenuated + dec.haze_total)
    assert np.all(dec.transmission > 0) and np.all(dec.transmission <= 1)
    # consistency with the attenuation/haze split for scalar airlight
    a_over_sigma = 0.85 / 1.1
    np.testing.assert_allclose(
        dec.hazy, dec.attenuated + a_over_sigma * (1.0 - dec.transmission), atol=1e-12
    )


def test_synthesize_hazy_hand_value():
    clear = np.full((2, 2, 3), 0.5)
    depth = np.full((2, 2), 1.0)
    dec = synthesize_hazy(clear, depth, HazeParams(airlight=0.9, scattering=0.9))
    t_r = math.exp(-0.9)
    expected = 0.5 * t_r + 1.0 * (1.0 - t_r)
    np.testing.assert_allclose(dec.hazy, expected, atol=1e-12)
    assert abs(dec.hazy[0, 0, 0] - 0.7967152) < 1e-6


def test_synthesize_hazy_limits():
    clear = np.full((2, 2, 3), 0.3)
    # zero depth: hazy equals clear exactly
    dec = synthesize_hazy(clear, np.zeros((2, 2)), HazeParams(0.9, 0.9))
    np.testing.assert_array_equal(dec.hazy, clear)
    # dense haze with A/sigma = 1: hazy saturates to 1
    dec = synthesize_hazy(clear, np.full((2, 2), 80.0), HazeParams(1.0, 1.0))
    np.testing.assert_allclose(dec.hazy, 1.0, atol=1e-12)
    with pytest.raises(ValueError):
        synthesize_hazy(clear, np.zeros((3, 3)), HazeParams(0.9, 0.9))


def test_per_channel_airlight_broadcast():
    depth = np.full((2, 2), 0.5)
    p = HazeParams(airlight=(0.7, 0.8, 0.9), scattering=1.0)
    h = haze_total(depth, p)
    profile = 1.0 - math.exp(-0.5)
    np.testing.assert_allclose(h[0, 0], np.array([0.7, 0.8, 0.9]) * profile)
