"""Diffusion noise schedule and the sampling step subsequence."""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Schedule:
    """Per-step noise variances beta_t with derived alpha_t and alpha_bar_t.

    `beta[i]` holds beta_{i+1}; `alpha_bar` is indexed directly by timestep,
    with alpha_bar[0] = 1 so that step arithmetic needs no special cases.
    """

    beta: np.ndarray
    alpha: np.ndarray = field(init=False)
    alpha_bar: np.ndarray = field(init=False)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.ndim != 1 or beta.size < 1:
            raise ValueError("beta must be a non-empty 1-D array")
        if np.any(beta <= 0) or np.any(beta >= 1):
            raise ValueError("every beta_t must lie in (0, 1)")
        object.__setattr__(self, "beta", beta)
        alpha = 1.0 - beta
        object.__setattr__(self, "alpha", alpha)
        abar = np.concatenate([[1.0], np.cumprod(alpha)])
        object.__setattr__(self, "alpha_bar", abar)

    @property
    def T(self) -> int:
        return self.beta.size


def make_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> Schedule:
    """Linear beta schedule from beta_start to beta_end inclusive."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if not (0 < beta_start <= beta_end < 1):
        raise ValueError("require 0 < beta_start <= beta_end < 1")
    return Schedule(np.linspace(beta_start, beta_end, T))


def subsequence(T: int, S: int) -> np.ndarray:
    """Evenly spaced sampling timesteps tau_i = round((i-1) * T/S) + 1, i = 1..S.

    Deduplicated and ascending; the terminal step T is forced into the
    sequence so sampling can start from the fully diffused state.
    """
    if not 1 <= S <= T:
        raise ValueError(f"require 1 <= S <= T, got S={S}, T={T}")
    steps = []
    for i in range(1, S + 1):
        q, r = divmod((i - 1) * T, S)  # round half up, exactly
        steps.append(q + (1 if 2 * r >= S else 0) + 1)
    steps = sorted(set(steps))
    if steps[-1] != T:
        steps.append(T)
    if steps[0] < 1 or steps[-1] > T:
        raise ValueError("subsequence escaped [1, T]")
    return np.asarray(steps, dtype=np.int64)
