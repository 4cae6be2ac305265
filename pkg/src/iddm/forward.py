"""Joint haze + noise forward diffusion.

Closed form:  x_t = sqrt(abar_t) * (x_0 + h_t) + sqrt(1 - abar_t) * eps
Step form:    x_t = sqrt(alpha_t) * x_{t-1} + sqrt(1 - alpha_t) * eps
                    + sqrt(abar_t) * dh_t

Iterating the step form with zeroed noise telescopes exactly onto the closed
form's mean; with h identically zero both reduce bit-for-bit to the plain
DDPM forward process.
"""

from dataclasses import dataclass

import numpy as np

from .schedule import Schedule


@dataclass(frozen=True)
class ForwardSample:
    x_t: np.ndarray
    t: int
    noise: np.ndarray
    h_t: np.ndarray


def _check_step(t: int, s: Schedule) -> None:
    if not 1 <= t <= s.T:
        raise ValueError(f"t={t} outside [1, {s.T}]")


def diffuse_closed(
    x0: np.ndarray, h_t: np.ndarray, t: int, noise: np.ndarray, s: Schedule
) -> ForwardSample:
    """Sample x_t directly from the base state. Noise is caller-supplied."""
    _check_step(t, s)
    if not (x0.shape == h_t.shape == noise.shape):
        raise ValueError("x0, h_t and noise shapes must match")
    ab = s.alpha_bar[t]
    x_t = np.sqrt(ab) * (x0 + h_t) + np.sqrt(1.0 - ab) * noise
    return ForwardSample(x_t=x_t, t=t, noise=noise, h_t=h_t)


def diffuse_step(
    x_prev: np.ndarray, dh_t: np.ndarray, t: int, noise: np.ndarray, s: Schedule
) -> np.ndarray:
    """Advance one step, adding scheduled noise and the scaled haze increment."""
    _check_step(t, s)
    if not (x_prev.shape == dh_t.shape == noise.shape):
        raise ValueError("x_prev, dh_t and noise shapes must match")
    a = s.alpha[t - 1]
    return np.sqrt(a) * x_prev + np.sqrt(1.0 - a) * noise + np.sqrt(s.alpha_bar[t]) * dh_t


def draw_noise(shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    """Standard-normal noise; thin wrapper so tests can replay exact draws."""
    return rng.standard_normal(shape)
