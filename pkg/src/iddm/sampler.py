"""Deterministic implicit sampling with per-step haze subtraction, plus the
final haze stabilization and division restoration.

Each update estimates the haze-augmented base state from the current noise
prediction, subtracts the haze accumulated between the two visited
timesteps, and re-injects the predicted noise at the lower step's level:

    x_lo = sqrt(abar_lo) * (x0_est - (h_hi - h_lo)) + sqrt(1 - abar_lo - sig^2) * eps

The terminal move to step 0 (abar_0 = 1) leaves the haze-free base state.
Restoration divides it by the stabilized haze map, an implicit transmission
proxy, with a floor bounding the amplification.
"""

import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import nets
from .io import save_image
from .schedule import Schedule


@dataclass
class SamplerConfig:
    subsequence: np.ndarray
    ddim_sigma: float = 0.0
    denominator_floor: float = 0.1
    blur_sigma: float = 3.0
    normalize_per_channel: bool = False
    # optional clamp on the base-state estimate; sparse-step sampling with an
    # imperfect predictor amplifies noise-estimate error by 1/sqrt(abar_t),
    # and bounding the estimate keeps the trajectory from diverging. None
    # preserves the exact algebraic update (required by the oracle checks).
    x0_clip: tuple[float, float] | None = None

    def __post_init__(self):
        self.subsequence = np.asarray(self.subsequence, dtype=np.int64)
        if self.subsequence.ndim != 1 or self.subsequence.size < 1:
            raise ValueError("subsequence must be a non-empty 1-D step array")
        if np.any(np.diff(self.subsequence) <= 0):
            raise ValueError("subsequence must be strictly increasing")
        if self.ddim_sigma < 0:
            raise ValueError("ddim_sigma must be >= 0")
        if not 0 < self.denominator_floor < 1:
            raise ValueError("denominator_floor must lie in (0, 1)")
        if self.x0_clip is not None and self.x0_clip[0] >= self.x0_clip[1]:
            raise ValueError("x0_clip must be an increasing (lo, hi) pair")


@dataclass
class StepRecord:
    t: int
    x_t: np.ndarray
    eps: np.ndarray
    h_t: np.ndarray


@dataclass
class SampleTrace:
    records: list[StepRecord] = field(default_factory=list)
    x0: np.ndarray | None = None
    haze_estimate: np.ndarray | None = None


def predict_x0(x_t: np.ndarray, eps: np.ndarray, t: int, s: Schedule) -> np.ndarray:
    """Invert the closed-form forward process for the (haze-augmented) base state."""
    if not 1 <= t <= s.T:
        raise ValueError(f"t={t} outside [1, {s.T}]")
    ab = s.alpha_bar[t]
    if ab == 0:
        raise ValueError("alpha_bar is zero at this step; cannot invert")
    return (x_t - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)


def sample_step(
    x_hi: np.ndarray,
    eps: np.ndarray,
    h_hi: np.ndarray,
    h_lo: np.ndarray,
    t_hi: int,
    t_lo: int,
    s: Schedule,
    cfg: SamplerConfig,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """One implicit update from t_hi down to t_lo (t_lo = 0 is the terminal move)."""
    if not 0 <= t_lo < t_hi <= s.T:
        raise ValueError(f"require 0 <= t_lo < t_hi <= T, got {t_lo}, {t_hi}")
    x0_est = predict_x0(x_hi, eps, t_hi, s)
    if cfg.x0_clip is not None:
        x0_est = np.clip(x0_est, cfg.x0_clip[0], cfg.x0_clip[1])
    ab_lo = s.alpha_bar[t_lo]
    sig = cfg.ddim_sigma
    var = 1.0 - ab_lo - sig * sig
    if var < 0:
        raise ValueError("1 - alpha_bar - sigma^2 negative; reduce ddim_sigma")
    out = np.sqrt(ab_lo) * (x0_est - (h_hi - h_lo)) + np.sqrt(var) * eps
    if sig > 0:
        if rng is None:
            raise ValueError("stochastic sampling requires an rng")
        out = out + sig * rng.standard_normal(out.shape)
    return out


def _as_eps_model(model):
    """Accept a ModelParams or a callable (x_t, h_t, hazy, t) -> noise array."""
    if callable(model):
        return model
    _check_finite_params(model)

    def eps_fn(x_t, h_t, hazy, t):
        return nets.denoiser_forward(model, x_t, h_t, hazy, t).data.astype(np.float64)

    return eps_fn


def _as_haze_model(model):
    """Accept a ModelParams or a callable (x_t, hazy, t) -> haze array."""
    if callable(model):
        return model
    _check_finite_params(model)

    def h_fn(x_t, hazy, t):
        return nets.htnet_forward(model, x_t, hazy, t).data.astype(np.float64)

    return h_fn


def _check_finite_params(model) -> None:
    for name, t in model.tensors.items():
        if not np.all(np.isfinite(t.data)):
            raise ValueError(f"model parameter {name} contains non-finite values")


def sample(
    hazy: np.ndarray,
    denoiser,
    htnet,
    s: Schedule,
    cfg: SamplerConfig,
    seed: int,
    x_init: np.ndarray | None = None,
) -> SampleTrace:
    """Run the sampler over the descending subsequence, recording each step.

    `denoiser` and `htnet` are ModelParams or equivalent callables (the latter
    is how oracle tests inject exact noise and haze). The initial state is
    standard normal drawn from `seed` unless `x_init` overrides it.
    """
    if cfg.subsequence[-1] > s.T:
        raise ValueError("subsequence exceeds the schedule horizon")
    eps_fn = _as_eps_model(denoiser)
    h_fn = _as_haze_model(htnet)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(hazy.shape) if x_init is None else np.array(x_init, copy=True)

    order = [int(t) for t in cfg.subsequence[::-1]]
    trace = SampleTrace()
    for k, t_hi in enumerate(order):
        t_lo = order[k + 1] if k + 1 < len(order) else 0
        h_hi = h_fn(x, hazy, t_hi)
        eps = eps_fn(x, h_hi, hazy, t_hi)
        h_lo = h_fn(x, hazy, t_lo) if t_lo >= 1 else np.zeros_like(h_hi)
        trace.records.append(StepRecord(t=t_hi, x_t=x, eps=eps, h_t=h_hi))
        x = sample_step(x, eps, h_hi, h_lo, t_hi, t_lo, s, cfg, rng)
    trace.x0 = x
    trace.haze_estimate = trace.records[0].h_t
    return trace


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, kernel radius ceil(3*sigma), reflect padding."""
    if sigma <= 0:
        return np.array(img, dtype=np.float64, copy=True)
    img = np.asarray(img, dtype=np.float64)
    radius = math.ceil(3.0 * sigma)
    # reflect padding cannot exceed dim-1; renormalized kernel keeps unit mass
    radius = min(radius, img.shape[0] - 1, img.shape[1] - 1)
    offsets = np.arange(-radius, radius + 1)
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    kernel /= kernel.sum()
    out = img
    for axis in (0, 1):
        pad = [(0, 0)] * img.ndim
        pad[axis] = (radius, radius)
        padded = np.pad(out, pad, mode="reflect")
        acc = np.zeros_like(out)
        for i, kv in enumerate(kernel):
            sl = [slice(None)] * img.ndim
            sl[axis] = slice(i, i + img.shape[axis])
            acc += kv * padded[tuple(sl)]
        out = acc
    return out


def stabilize_haze(h_total: np.ndarray, cfg: SamplerConfig) -> np.ndarray:
    """Gaussian-smooth the haze estimate and min-max normalize it to [0, 1].

    Normalization is joint over channels by default so airlight colour
    ratios survive; per-channel mode is available via the config flag.
    A constant input maps to all zeros.
    """
    if np.any(h_total < 0):
        raise ValueError("haze estimate must be non-negative")
    smooth = gaussian_blur(h_total, cfg.blur_sigma)
    if cfg.normalize_per_channel:
        lo = smooth.min(axis=(0, 1), keepdims=True)
        hi = smooth.max(axis=(0, 1), keepdims=True)
        span = hi - lo
        out = np.where(span > 0, (smooth - lo) / np.where(span > 0, span, 1.0), 0.0)
        return out
    lo, hi = smooth.min(), smooth.max()
    if hi == lo:
        return np.zeros_like(smooth)
    return (smooth - lo) / (hi - lo)


def restore(x0: np.ndarray, h_stab: np.ndarray, cfg: SamplerConfig) -> np.ndarray:
    """Divide the base state by the implicit transmission 1 - h_stab, floored."""
    if np.any(h_stab < 0) or np.any(h_stab > 1):
        raise ValueError("stabilized haze must lie in [0, 1]")
    denom = np.maximum(1.0 - h_stab, cfg.denominator_floor)
    return np.clip(x0 / denom, 0.0, 1.0)


def export_trace(trace: SampleTrace, out_dir: str) -> None:
    """Write per-step PNGs and a JSON summary of noise/haze statistics."""
    os.makedirs(out_dir, exist_ok=True)
    summary = []
    for rec in trace.records:
        save_image(np.clip(rec.x_t, 0.0, 1.0), os.path.join(out_dir, f"x_{rec.t:05d}.png"))
        save_image(np.clip(rec.h_t, 0.0, 1.0), os.path.join(out_dir, f"h_{rec.t:05d}.png"))
        summary.append(
            {
                "t": int(rec.t),
                "eps_max": float(np.abs(rec.eps).max()),
                "eps_mean": float(rec.eps.mean()),
                "haze_max": float(rec.h_t.max()),
                "haze_mean": float(rec.h_t.mean()),
            }
        )
    with open(os.path.join(out_dir, "trace.json"), "w", encoding="utf-8") as fh:
        json.dump({"steps": summary, "written_at": time.time()}, fh, indent=2)
