"""Textbook DDPM forward process and DDIM sampler, haze-free.

These exist so the haze-augmented code paths can be checked for exact
reduction: with h identically zero, the package's forward process and
sampler must reproduce these reference implementations bit for bit. The
arithmetic here intentionally mirrors the expression order of the haze-aware
code with the haze terms elided.
"""

import numpy as np

from .schedule import Schedule


def ddpm_forward_closed(x0: np.ndarray, t: int, noise: np.ndarray, s: Schedule) -> np.ndarray:
    ab = s.alpha_bar[t]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise


def ddpm_forward_step(x_prev: np.ndarray, t: int, noise: np.ndarray, s: Schedule) -> np.ndarray:
    a = s.alpha[t - 1]
    return np.sqrt(a) * x_prev + np.sqrt(1.0 - a) * noise


def ddim_predict_x0(x_t: np.ndarray, eps: np.ndarray, t: int, s: Schedule) -> np.ndarray:
    ab = s.alpha_bar[t]
    return (x_t - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)


def ddim_step(
    x_hi: np.ndarray, eps: np.ndarray, t_hi: int, t_lo: int, s: Schedule
) -> np.ndarray:
    """Deterministic (sigma = 0) implicit update from t_hi down to t_lo."""
    x0_est = ddim_predict_x0(x_hi, eps, t_hi, s)
    ab_lo = s.alpha_bar[t_lo]
    return np.sqrt(ab_lo) * x0_est + np.sqrt(1.0 - ab_lo) * eps


def ddim_sample(x_init: np.ndarray, eps_fn, steps: np.ndarray, s: Schedule) -> np.ndarray:
    """Run the deterministic sampler down an ascending step subsequence to 0.

    `eps_fn(x, t)` supplies the noise estimate at each visited state.
    """
    order = list(np.asarray(steps, dtype=np.int64))
    order.sort(reverse=True)
    x = x_init
    for k, t_hi in enumerate(order):
        t_lo = order[k + 1] if k + 1 < len(order) else 0
        x = ddim_step(x, eps_fn(x, t_hi), t_hi, t_lo, s)
    return x
