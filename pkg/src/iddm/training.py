"""Online data synthesis and the two-stage training procedure.

Stage 1 fits the denoiser on jointly hazed-and-noised states built from
ground-truth physics. Stage 2 freezes it and fits the haze estimator under
a dual constraint: match the ground-truth haze map, and leave the frozen
denoiser's noise prediction unchanged when swapped in for the truth. The
second term only constrains the estimator because gradients flow through
the frozen network's input pathway.
"""

import csv
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import TrainingDivergedError
from .forward import diffuse_closed
from .io import generate_scene, load_depth, load_image, load_manifest
from .nets import (
    ModelParams,
    adam_update,
    denoiser_architecture,
    denoiser_forward,
    htnet_architecture,
    htnet_forward,
    init_params,
    save_checkpoint,
)
from .physics import HazeParams, haze_at_step, synthesize_hazy
from .schedule import Schedule, make_schedule


@dataclass
class TrainConfig:
    """Desk-scale defaults; `full_scale()` restores the published settings."""

    T: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.1  # keeps alpha_bar_T ~ 5e-5 at T = 200
    airlight_range: tuple[float, float] = (0.7, 1.0)
    sigma_range: tuple[float, float] = (0.4, 1.5)
    depth_scale: float = 1.0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.99
    batch: int = 4
    iters_stage1: int = 2000
    iters_stage2: int = 500
    patch: int = 32
    seed: int = 0
    base_width: int = 16
    levels: int = 2
    emb_dim: int = 16
    htnet_inputs: str = "xt"  # "xt" | "xt_hazy"
    checkpoint_every: int = 500

    def __post_init__(self):
        lo, hi = self.airlight_range
        if not (0 < lo <= hi <= 2):
            raise ValueError("airlight range must be non-empty within (0, 2]")
        lo, hi = self.sigma_range
        if not (0 < lo <= hi):
            raise ValueError("sigma range must be non-empty and positive")
        if self.patch < 2 or self.batch < 1 or self.T < 1:
            raise ValueError("patch, batch and T must be positive")

    @classmethod
    def full_scale(cls) -> "TrainConfig":
        return cls(
            T=1000,
            beta_end=0.02,
            lr=1e-5,
            batch=16,
            iters_stage1=500_000,
            iters_stage2=60_000,
            patch=256,
            checkpoint_every=10_000,
        )

    @classmethod
    def from_json(cls, path: str) -> "TrainConfig":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        raw["airlight_range"] = tuple(raw.get("airlight_range", (0.7, 1.0)))
        raw["sigma_range"] = tuple(raw.get("sigma_range", (0.4, 1.5)))
        return cls(**raw)

    def to_json(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2)

    def schedule(self) -> Schedule:
        return make_schedule(self.T, self.beta_start, self.beta_end)


@dataclass
class TrainBatch:
    x0: np.ndarray       # (B, P, P, 3) attenuated base states
    hazy: np.ndarray     # x0 + h_total, exact
    h_t: np.ndarray      # haze at each element's sampled timestep
    h_total: np.ndarray
    noise: np.ndarray
    t: np.ndarray        # (B,) timesteps in [1, T]


def make_scene_pool(count: int, seed: int, size: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Procedural (clear, depth) pairs; scene i is generate_scene(seed + i)."""
    return [generate_scene(seed + i, size, size) for i in range(count)]


def load_scene_pool(manifest_path: str) -> list[tuple[np.ndarray, np.ndarray]]:
    """Load (clear, depth) pairs from a JSON-lines manifest.

    Depth is normalized to [0, 1] here; TrainConfig.depth_scale is applied
    at batch-sampling time, so it is not passed to load_depth.
    """
    pool = []
    for rec in load_manifest(manifest_path):
        clear = load_image(rec["clear"])
        if clear.shape[2] == 1:
            clear = np.repeat(clear, 3, axis=2)
        pool.append((clear, load_depth(rec["depth"])))
    return pool


def sample_batch(source, cfg: TrainConfig, rng: np.random.Generator) -> TrainBatch:
    """Draw one training batch with online haze synthesis.

    Per element: pick a scene, crop a random patch, flip jointly, sample
    (A, sigma) uniformly from the configured ranges and t uniformly from
    [1, T], then synthesize the physics quantities at that timestep.
    """
    if len(source) == 0:
        raise ValueError("empty scene source")
    p = cfg.patch
    fields = {k: [] for k in ("x0", "hazy", "h_t", "h_total", "noise")}
    ts = []
    for _ in range(cfg.batch):
        clear, depth = source[int(rng.integers(len(source)))]
        h, w = depth.shape
        if h < p or w < p:
            raise ValueError(f"scene {h}x{w} smaller than patch {p}")
        r0 = int(rng.integers(h - p + 1))
        c0 = int(rng.integers(w - p + 1))
        clear_c = clear[r0 : r0 + p, c0 : c0 + p]
        depth_c = depth[r0 : r0 + p, c0 : c0 + p] * cfg.depth_scale
        if rng.random() < 0.5:
            clear_c, depth_c = clear_c[:, ::-1], depth_c[:, ::-1]
        if rng.random() < 0.5:
            clear_c, depth_c = clear_c[::-1], depth_c[::-1]
        params = HazeParams(
            airlight=float(rng.uniform(*cfg.airlight_range)),
            scattering=float(rng.uniform(*cfg.sigma_range)),
        )
        t = int(rng.integers(1, cfg.T + 1))
        decomp = synthesize_hazy(clear_c, depth_c, params)
        fields["x0"].append(decomp.attenuated)
        fields["hazy"].append(decomp.hazy)
        fields["h_total"].append(decomp.haze_total)
        fields["h_t"].append(haze_at_step(depth_c, params, t, cfg.T))
        fields["noise"].append(rng.standard_normal(decomp.attenuated.shape))
        ts.append(t)
    return TrainBatch(
        x0=np.stack(fields["x0"]),
        hazy=np.stack(fields["hazy"]),
        h_t=np.stack(fields["h_t"]),
        h_total=np.stack(fields["h_total"]),
        noise=np.stack(fields["noise"]),
        t=np.asarray(ts, dtype=np.int64),
    )


def _diffused_states(batch: TrainBatch, s: Schedule) -> np.ndarray:
    rows = [
        diffuse_closed(batch.x0[b], batch.h_t[b], int(batch.t[b]), batch.noise[b], s).x_t
        for b in range(batch.t.size)
    ]
    return np.stack(rows)


def mse_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    d = ad.sub(pred, Tensor(np.asarray(target, dtype=pred.dtype)))
    return ad.mean_(ad.mul(d, d))


def l1_loss(pred: Tensor, target) -> Tensor:
    target = target if isinstance(target, Tensor) else Tensor(np.asarray(target, dtype=pred.dtype))
    return ad.mean_(ad.abs_(ad.sub(pred, target)))


def stage1_step(denoiser: ModelParams, batch: TrainBatch, s: Schedule, cfg: TrainConfig) -> float:
    """One denoiser update: MSE between true and predicted noise."""
    denoiser.set_requires_grad(True)
    x_t = _diffused_states(batch, s)
    f32 = lambda a: a.astype(np.float32)
    pred = denoiser_forward(denoiser, f32(x_t), f32(batch.h_t), f32(batch.hazy), batch.t)
    loss = mse_loss(pred, f32(batch.noise))
    value = float(loss.data)
    if not np.isfinite(value):
        raise TrainingDivergedError(f"stage-1 loss is not finite: {value}")
    denoiser.zero_grad()
    loss.backward()
    adam_update(denoiser, cfg.lr, cfg.beta1, cfg.beta2)
    return value


def stage2_step(
    htnet: ModelParams,
    frozen_denoiser: ModelParams,
    batch: TrainBatch,
    s: Schedule,
    cfg: TrainConfig,
    h_override: Tensor | None = None,
) -> float:
    """One haze-estimator update under the dual constraint.

    With `h_override` the loss is evaluated at that haze prediction instead
    of the network output and no update is applied (used to verify the loss
    vanishes at the ground-truth fixed point).
    """
    frozen_denoiser.set_requires_grad(False)
    htnet.set_requires_grad(True)
    x_t = _diffused_states(batch, s)
    f32 = lambda a: a.astype(np.float32)
    x_t32, hazy32, h_true32 = f32(x_t), f32(batch.hazy), f32(batch.h_t)

    h_pred = h_override if h_override is not None else htnet_forward(htnet, x_t32, hazy32, batch.t)
    pred_with_estimate = denoiser_forward(frozen_denoiser, x_t32, h_pred, hazy32, batch.t)
    pred_with_truth = denoiser_forward(frozen_denoiser, x_t32, h_true32, hazy32, batch.t)

    loss = ad.add(
        l1_loss(h_pred, h_true32),
        l1_loss(pred_with_estimate, pred_with_truth.data),
    )
    value = float(loss.data)
    if not np.isfinite(value):
        raise TrainingDivergedError(f"stage-2 loss is not finite: {value}")
    if h_override is None:
        htnet.zero_grad()
        loss.backward()
        adam_update(htnet, cfg.lr, cfg.beta1, cfg.beta2)
    return value


def _run_stage(step_fn, params, cfg, source, rng, iters, out_dir, stem, meta):
    losses = []
    for it in range(iters):
        batch = sample_batch(source, cfg, rng)
        try:
            losses.append(step_fn(params, batch))
        except TrainingDivergedError as exc:
            raise TrainingDivergedError(f"iteration {it + 1}: {exc}") from exc
        if out_dir and cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(os.path.join(out_dir, f"{stem}_{it + 1:06d}.ckpt"), params, meta)
    if out_dir:
        save_checkpoint(os.path.join(out_dir, f"{stem}.ckpt"), params, meta)
    return losses


def _checkpoint_meta(cfg: TrainConfig, role: str) -> dict:
    return {
        "role": role,
        "T": cfg.T,
        "beta_start": cfg.beta_start,
        "beta_end": cfg.beta_end,
        "config": asdict(cfg),
    }


def train_stage1(
    cfg: TrainConfig,
    source,
    out_dir: str | None = None,
    rng: np.random.Generator | None = None,
    params: ModelParams | None = None,
) -> tuple[ModelParams, list[float]]:
    """Train the denoiser from scratch (or continue from `params`)."""
    s = cfg.schedule()
    if params is None:
        params = init_params(
            denoiser_architecture(cfg.base_width, cfg.levels, cfg.emb_dim), seed=cfg.seed
        )
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    losses = _run_stage(
        lambda p, b: stage1_step(p, b, s, cfg),
        params, cfg, source, rng, cfg.iters_stage1, out_dir, "denoiser",
        _checkpoint_meta(cfg, "denoiser"),
    )
    return params, losses


def train_stage2(
    cfg: TrainConfig,
    frozen_denoiser: ModelParams,
    source,
    out_dir: str | None = None,
    rng: np.random.Generator | None = None,
    params: ModelParams | None = None,
) -> tuple[ModelParams, list[float]]:
    """Train the haze estimator against a frozen denoiser."""
    s = cfg.schedule()
    if params is None:
        params = init_params(
            htnet_architecture(cfg.base_width, cfg.levels, cfg.emb_dim, cfg.htnet_inputs),
            seed=cfg.seed + 1,
        )
    rng = rng if rng is not None else np.random.default_rng(cfg.seed + 1)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    losses = _run_stage(
        lambda p, b: stage2_step(p, frozen_denoiser, b, s, cfg),
        params, cfg, source, rng, cfg.iters_stage2, out_dir, "htnet",
        _checkpoint_meta(cfg, "htnet"),
    )
    return params, losses


def export_loss_csv(path: str, losses: list[float]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss"])
        for i, value in enumerate(losses, 1):
            writer.writerow([i, f"{value:.8f}"])
