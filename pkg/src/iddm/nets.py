"""Trainable components: the conditioned denoiser U-Net and the haze estimator.

Both share one small encoder-decoder topology: a stem convolution with an
additive sinusoidal time embedding, one strided downsampling per extra
level, two mid convolutions at the coarsest resolution, nearest-neighbour
upsampling with skip concatenation on the way back up, SiLU activations
throughout, 3x3 kernels everywhere. The denoiser consumes the 9-channel
stack (state, haze, hazy conditioning); the haze estimator runs the same
network at reduced input width (3 channels by default) with a softplus
output so predicted haze is non-negative.
"""

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import CheckpointError

CHECKPOINT_MAGIC = b"IDDM1"


@dataclass(frozen=True)
class Architecture:
    in_channels: int
    out_channels: int = 3
    base_width: int = 16
    levels: int = 2
    emb_dim: int = 16
    out_activation: str = "none"  # "none" | "softplus"

    def __post_init__(self):
        if min(self.in_channels, self.out_channels, self.base_width, self.levels) < 1:
            raise ValueError("architecture dimensions must be positive")
        if self.emb_dim < 2 or self.emb_dim % 2:
            raise ValueError("emb_dim must be an even number >= 2")
        if self.out_activation not in ("none", "softplus"):
            raise ValueError(f"unknown output activation {self.out_activation!r}")


def denoiser_architecture(base_width: int = 16, levels: int = 2, emb_dim: int = 16) -> Architecture:
    """Noise predictor conditioned on (state, haze, hazy) = 9 input channels."""
    return Architecture(in_channels=9, base_width=base_width, levels=levels, emb_dim=emb_dim)


def htnet_architecture(
    base_width: int = 16, levels: int = 2, emb_dim: int = 16, inputs: str = "xt"
) -> Architecture:
    """Haze estimator at reduced input width: state only, or state + hazy."""
    if inputs not in ("xt", "xt_hazy"):
        raise ValueError(f"unknown htnet input mode {inputs!r}")
    return Architecture(
        in_channels=3 if inputs == "xt" else 6,
        base_width=base_width,
        levels=levels,
        emb_dim=emb_dim,
        out_activation="softplus",
    )


def _param_spec(arch: Architecture) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) pairs; kernel layout is (Cin, KH, KW, Cout)."""
    w = [arch.base_width * (1 << l) for l in range(arch.levels)]
    spec = [
        ("stem.w", (arch.in_channels, 3, 3, w[0])),
        ("stem.b", (w[0],)),
        ("temb.w", (arch.emb_dim, w[0])),
        ("temb.b", (w[0],)),
    ]
    for l in range(arch.levels - 1):
        spec += [
            (f"enc{l}.w", (w[l], 3, 3, w[l])),
            (f"enc{l}.b", (w[l],)),
            (f"down{l}.w", (w[l], 3, 3, w[l + 1])),
            (f"down{l}.b", (w[l + 1],)),
        ]
    spec += [
        ("mid0.w", (w[-1], 3, 3, w[-1])),
        ("mid0.b", (w[-1],)),
        ("mid1.w", (w[-1], 3, 3, w[-1])),
        ("mid1.b", (w[-1],)),
    ]
    for l in reversed(range(arch.levels - 1)):
        spec += [
            (f"up{l}.w", (w[l + 1], 3, 3, w[l])),
            (f"up{l}.b", (w[l],)),
            (f"fuse{l}.w", (2 * w[l], 3, 3, w[l])),
            (f"fuse{l}.b", (w[l],)),
        ]
    spec += [
        ("out.w", (w[0], 3, 3, arch.out_channels)),
        ("out.b", (arch.out_channels,)),
    ]
    return spec


@dataclass
class ModelParams:
    """Named parameter tensors with paired gradient and Adam moment buffers."""

    arch: Architecture
    tensors: dict[str, Tensor]
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    adam_step: int = 0

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = np.zeros_like(t.data)

    def set_requires_grad(self, flag: bool) -> None:
        for t in self.tensors.values():
            t.requires_grad = flag

    def nbytes_equal(self, other: "ModelParams") -> bool:
        return all(
            np.array_equal(t.data, other.tensors[k].data) for k, t in self.tensors.items()
        )

    @property
    def dtype(self):
        return self.tensors["stem.w"].dtype


def init_params(arch: Architecture, seed: int, dtype=np.float32) -> ModelParams:
    """Fan-in-scaled uniform kernels (bound sqrt(6/fan_in)), zero biases.

    The output head kernel starts at zero so an untrained network predicts
    zero and the initial denoising loss sits at the noise power.
    """
    rng = np.random.default_rng(seed)
    tensors: dict[str, Tensor] = {}
    for name, shape in _param_spec(arch):
        if name.endswith(".b") or name == "out.w":
            data = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[:-1]))
            bound = np.sqrt(6.0 / fan_in)
            data = rng.uniform(-bound, bound, size=shape).astype(dtype)
        t = Tensor(data, requires_grad=True)
        t.grad = np.zeros_like(data)
        tensors[name] = t
    zeros = {n: np.zeros_like(t.data) for n, t in tensors.items()}
    return ModelParams(
        arch=arch,
        tensors=tensors,
        adam_m=zeros,
        adam_v={n: z.copy() for n, z in zeros.items()},
    )


def time_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal features of t at geometric frequencies, values in [-1, 1]."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _as_batched(x, name: str, dtype) -> tuple[Tensor, bool]:
    if isinstance(x, Tensor):
        if x.data.ndim == 3:
            raise ValueError(f"{name}: grad-carrying inputs must already be batched")
        return x, True
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim == 3:
        return Tensor(arr[None]), False
    if arr.ndim == 4:
        return Tensor(arr), True
    raise ValueError(f"{name}: expected (H, W, C) or (B, H, W, C), got {arr.shape}")


def unet_forward(p: ModelParams, x: Tensor, t) -> Tensor:
    """Run the network on a batched (B, H, W, Cin) tensor at timesteps t."""
    arch = p.arch
    b, h, w, c = x.shape
    if c != arch.in_channels:
        raise ValueError(f"expected {arch.in_channels} input channels, got {c}")
    div = 1 << (arch.levels - 1)
    if h % div or w % div:
        raise ValueError(f"spatial dims must be divisible by {div}, got {h}x{w}")
    t_arr = np.broadcast_to(np.atleast_1d(np.asarray(t, dtype=np.int64)), (b,))

    P = p.tensors
    emb = Tensor(time_embedding(t_arr, arch.emb_dim).astype(x.dtype))
    emb = ad.add(ad.matmul(emb, P["temb.w"]), P["temb.b"])  # (B, w0)

    cur = ad.conv2d(x, P["stem.w"], P["stem.b"])
    cur = ad.silu(ad.add(cur, _expand_bias(emb, b)))

    skips = []
    for l in range(arch.levels - 1):
        cur = ad.silu(ad.conv2d(cur, P[f"enc{l}.w"], P[f"enc{l}.b"]))
        skips.append(cur)
        cur = ad.silu(ad.conv2d(cur, P[f"down{l}.w"], P[f"down{l}.b"], stride=2))

    cur = ad.silu(ad.conv2d(cur, P["mid0.w"], P["mid0.b"]))
    cur = ad.silu(ad.conv2d(cur, P["mid1.w"], P["mid1.b"]))

    for l in reversed(range(arch.levels - 1)):
        cur = ad.upsample_nearest2x(cur)
        cur = ad.silu(ad.conv2d(cur, P[f"up{l}.w"], P[f"up{l}.b"]))
        cur = ad.concat_channels([cur, skips[l]])
        cur = ad.silu(ad.conv2d(cur, P[f"fuse{l}.w"], P[f"fuse{l}.b"]))

    out = ad.conv2d(cur, P["out.w"], P["out.b"])
    if arch.out_activation == "softplus":
        out = ad.softplus(out)
    return out


def _expand_bias(emb: Tensor, b: int) -> Tensor:
    """Reshape a (B, C) embedding so it broadcasts over (B, H, W, C)."""
    reshaped = Tensor(emb.data.reshape(b, 1, 1, -1))
    if emb.requires_grad:
        reshaped.requires_grad = True
        reshaped._parents = (emb,)
        reshaped._grad_fn = lambda g: (g.reshape(emb.shape),)
    return reshaped


def denoiser_forward(p: ModelParams, x_t, h_t, hazy, t) -> Tensor:
    """Predict noise from the diffused state, its haze map and the hazy image."""
    xt, batched = _as_batched(x_t, "x_t", p.dtype)
    ht, _ = _as_batched(h_t, "h_t", p.dtype)
    hz, _ = _as_batched(hazy, "hazy", p.dtype)
    if not (xt.shape == ht.shape == hz.shape):
        raise ValueError("x_t, h_t and hazy shapes must match")
    out = unet_forward(p, ad.concat_channels([xt, ht, hz]), t)
    return out if batched else _squeeze_batch(out)


def htnet_forward(p: ModelParams, x_t, hazy, t) -> Tensor:
    """Predict the non-negative haze map at timestep t."""
    xt, batched = _as_batched(x_t, "x_t", p.dtype)
    hz, _ = _as_batched(hazy, "hazy", p.dtype)
    if xt.shape != hz.shape:
        raise ValueError("x_t and hazy shapes must match")
    inp = xt if p.arch.in_channels == 3 else ad.concat_channels([xt, hz])
    out = unet_forward(p, inp, t)
    return out if batched else _squeeze_batch(out)


def _squeeze_batch(out: Tensor) -> Tensor:
    squeezed = Tensor(out.data[0])
    if out.requires_grad:
        squeezed.requires_grad = True
        squeezed._parents = (out,)
        squeezed._grad_fn = lambda g: (g[None],)
    return squeezed


def adam_update(
    p: ModelParams, lr: float, beta1: float = 0.9, beta2: float = 0.99, eps: float = 1e-8
) -> None:
    """Bias-corrected Adam step over every parameter tensor."""
    for t in p.tensors.values():
        if t.grad is None:
            raise ValueError("gradients not populated; run backward first")
    p.adam_step += 1
    c1 = 1.0 - beta1 ** p.adam_step
    c2 = 1.0 - beta2 ** p.adam_step
    for name, t in p.tensors.items():
        g = t.grad
        m = p.adam_m[name]
        v = p.adam_v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        t.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def save_checkpoint(path: str, p: ModelParams, meta: dict | None = None) -> None:
    """Container file: magic, JSON header with tensor table, float32 payload."""
    entries: list[tuple[str, np.ndarray]] = []
    for name, t in p.tensors.items():
        entries.append((f"param/{name}", t.data))
        entries.append((f"adam_m/{name}", p.adam_m[name]))
        entries.append((f"adam_v/{name}", p.adam_v[name]))
    table = {}
    offset = 0
    payload = bytearray()
    for name, arr in entries:
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        table[name] = {"offset": offset, "shape": list(arr.shape), "dtype": "f4"}
        payload += raw
        offset += len(raw)
    header = json.dumps(
        {
            "arch": asdict(p.arch),
            "adam_step": p.adam_step,
            "meta": meta or {},
            "tensors": table,
        }
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(payload)


def load_checkpoint(path: str, dtype=np.float32) -> tuple[ModelParams, dict]:
    """Inverse of save_checkpoint; returns (params, meta)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic, not an IDDM checkpoint")
    try:
        (hlen,) = struct.unpack_from("<Q", blob, len(CHECKPOINT_MAGIC))
        hstart = len(CHECKPOINT_MAGIC) + 8
        header = json.loads(blob[hstart : hstart + hlen].decode("utf-8"))
        arch = Architecture(**header["arch"])
        base = hstart + hlen

        def read(name: str) -> np.ndarray:
            entry = header["tensors"][name]
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            start = base + entry["offset"]
            arr = np.frombuffer(blob, dtype="<f4", count=count, offset=start)
            return arr.reshape(shape).astype(dtype)

        p = init_params(arch, seed=0, dtype=dtype)
        for name, t in p.tensors.items():
            data = read(f"param/{name}")
            if data.shape != t.data.shape:
                raise CheckpointError(f"{path}: shape mismatch for {name}")
            t.data = data
            t.grad = np.zeros_like(data)
            p.adam_m[name] = read(f"adam_m/{name}")
            p.adam_v[name] = read(f"adam_v/{name}")
        p.adam_step = int(header["adam_step"])
    except CheckpointError:
        raise
    except (KeyError, ValueError, TypeError, struct.error, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from exc
    return p, header.get("meta", {})
