import math

import numpy as np
import pytest

from iddm import (
    HazeParams,
    Schedule,
    diffuse_closed,
    diffuse_step,
    haze_at_step,
    haze_increment,
    haze_total,
    make_schedule,
)
from iddm.reference import ddpm_forward_closed, ddpm_forward_step


def test_closed_form_reduces_to_noiseless_scaling():
    s = make_schedule(10)
    x0 = np.full((2, 2, 3), 0.4)
    zeros = np.zeros_like(x0)
    out = diffuse_closed(x0, zeros, 5, zeros, s)
    np.testing.assert_array_equal(out.x_t, np.sqrt(s.alpha_bar[5]) * x0)


def test_closed_form_hand_value():
    # alpha_bar_1 = 0.25 via beta_1 = 0.75
    s = Schedule(np.array([0.75]))
    x0 = np.full((1, 1, 1), 0.4)
    h = np.full((1, 1, 1), 0.2)
    eps = np.ones((1, 1, 1))
    out = diffuse_closed(x0, h, 1, eps, s)
    expected = 0.5 * 0.6 + math.sqrt(0.75) * 1.0
    assert abs(out.x_t[0, 0, 0] - expected) < 1e-12
    assert abs(out.x_t[0, 0, 0] - 1.1660254) < 1e-7


def test_closed_form_terminal_limit():
    s = make_schedule(1000)
    rng = np.random.default_rng(0)
    x0 = rng.uniform(0, 1, (4, 4, 3))
    h = rng.uniform(0, 1, (4, 4, 3))
    noise = rng.standard_normal((4, 4, 3))
    out = diffuse_closed(x0, h, 1000, noise, s)
    bound = math.sqrt(s.alpha_bar[1000]) * np.abs(x0 + h).max() + (
        1.0 - math.sqrt(1.0 - s.alpha_bar[1000])
    ) * np.abs(noise).max()
    assert np.abs(out.x_t - noise).max() <= bound + 1e-12


def test_step_hand_value():
    # alpha_2 = 0.99 with alpha_bar_2 = 0.9  =>  beta_1 = 1 - 0.9/0.99
    s = Schedule(np.array([1.0 - 0.9 / 0.99, 0.01]))
    assert abs(s.alpha[1] - 0.99) < 1e-15
    assert abs(s.alpha_bar[2] - 0.9) < 1e-15
    x_prev = np.ones((1, 1, 1))
    dh = np.full((1, 1, 1), 0.1)
    out = diffuse_step(x_prev, dh, 2, np.zeros((1, 1, 1)), s)
    expected = math.sqrt(0.99) + math.sqrt(0.9) * 0.1
    assert abs(out[0, 0, 0] - expected) < 1e-12
    assert abs(out[0, 0, 0] - 1.0898557) < 1e-7


def test_step_pure_scaling_when_empty():
    s = make_schedule(10)
    x = np.full((2, 2, 3), 0.7)
    zeros = np.zeros_like(x)
    out = diffuse_step(x, zeros, 3, zeros, s)
    np.testing.assert_array_equal(out, np.sqrt(s.alpha[2]) * x)


@pytest.mark.parametrize("T,tol", [(50, 1e-6), (1000, 1e-4)])
def test_zero_noise_iteration_telescopes_to_closed_form(T, tol):
    rng = np.random.default_rng(7)
    p = HazeParams(airlight=0.9, scattering=1.0)
    depth = rng.uniform(0, 1, size=(8, 8))
    x0 = rng.uniform(0, 1, size=(8, 8, 3))
    s = make_schedule(T)
    zeros = np.zeros_like(x0)
    x = x0.copy()
    for t in range(1, T + 1):
        x = diffuse_step(x, haze_increment(depth, p, t, T), t, zeros, s)
    target = np.sqrt(s.alpha_bar[T]) * (x0 + haze_total(depth, p))
    assert np.abs(x - target).max() <= tol


def test_haze_free_reduction_is_bit_identical_to_ddpm():
    s = make_schedule(100)
    rng = np.random.default_rng(9)
    x0 = rng.uniform(0, 1, (4, 4, 3))
    zeros = np.zeros_like(x0)
    for t in (1, 17, 100):
        noise = rng.standard_normal(x0.shape)
        ours = diffuse_closed(x0, zeros, t, noise, s).x_t
        ref = ddpm_forward_closed(x0, t, noise, s)
        np.testing.assert_array_equal(ours, ref)
        ours_step = diffuse_step(x0, zeros, t, noise, s)
        ref_step = ddpm_forward_step(x0, t, noise, s)
        np.testing.assert_array_equal(ours_step, ref_step)


def test_shape_and_range_validation():
    s = make_schedule(10)
    x = np.zeros((2, 2, 3))
    with pytest.raises(ValueError):
        diffuse_closed(x, np.zeros((2, 2, 1)), 1, x, s)
    with pytest.raises(ValueError):
        diffuse_closed(x, x, 0, x, s)
    with pytest.raises(ValueError):
        diffuse_step(x, x, 11, x, s)
