import numpy as np
import pytest

from iddm import Schedule, make_schedule, subsequence


def test_single_step_schedule():
    s = make_schedule(1, beta_start=0.1, beta_end=0.5)
    assert s.T == 1
    np.testing.assert_allclose(s.beta, [0.1])
    assert s.alpha_bar[0] == 1.0
    assert s.alpha_bar[1] == 1.0 - 0.1


def test_default_schedule_terminal_alpha_bar():
    s = make_schedule(1000)
    # independent evaluation of the cumulative product in log space
    indep = np.exp(np.cumsum(np.log1p(-np.linspace(1e-4, 0.02, 1000))))
    assert s.alpha_bar[-1] < 5e-5
    assert indep[-1] < 5e-5
    np.testing.assert_allclose(s.alpha_bar[1:], indep, rtol=1e-12)


def test_alpha_bar_recursion_and_monotonicity():
    s = make_schedule(1000)
    for t in (1, 10, 500, 1000):
        assert np.isclose(
            s.alpha_bar[t], s.alpha[t - 1] * s.alpha_bar[t - 1], rtol=1e-12, atol=0.0
        )
    assert np.all(np.diff(s.alpha_bar) < 0)
    assert np.all((s.alpha > 0) & (s.alpha < 1))


def test_variance_recursion_identity():
    s = make_schedule(1000)
    lhs = s.alpha * (1.0 - s.alpha_bar[:-1]) + (1.0 - s.alpha)
    rhs = 1.0 - s.alpha_bar[1:]
    assert np.abs(lhs - rhs).max() <= 1e-12


def test_make_schedule_rejects_bad_ranges():
    with pytest.raises(ValueError):
        make_schedule(0)
    with pytest.raises(ValueError):
        make_schedule(10, beta_start=0.0)
    with pytest.raises(ValueError):
        make_schedule(10, beta_start=0.5, beta_end=0.1)
    with pytest.raises(ValueError):
        make_schedule(10, beta_start=0.5, beta_end=1.0)
    with pytest.raises(ValueError):
        Schedule(np.array([0.1, 1.5]))


def test_subsequence_paper_spacing():
    steps = subsequence(1000, 10)
    np.testing.assert_array_equal(
        steps, [1, 101, 201, 301, 401, 501, 601, 701, 801, 901, 1000]
    )


def test_subsequence_degenerate_and_dense():
    np.testing.assert_array_equal(subsequence(1000, 1), [1, 1000])
    # full sequence: formula enumerated by hand for T = 5
    np.testing.assert_array_equal(subsequence(5, 5), [1, 2, 3, 4, 5])
    with pytest.raises(ValueError):
        subsequence(10, 11)
    with pytest.raises(ValueError):
        subsequence(10, 0)


def test_subsequence_sorted_unique_bounded():
    for T, S in [(7, 3), (100, 7), (1000, 37), (50, 50)]:
        steps = subsequence(T, S)
        assert np.all(np.diff(steps) > 0)
        assert steps[0] >= 1 and steps[-1] == T
