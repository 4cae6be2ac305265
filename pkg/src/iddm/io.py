"""Image and depth-map I/O plus procedural scene generation.

Conventions used throughout the package:

* images are float64 arrays of shape (H, W, C) with C in {1, 3}; clear and
  hazy images live in [0, 1], haze maps and noise tensors may exceed it;
* depth maps are float64 arrays of shape (H, W) with non-negative entries.

Supported on disk: PNG (8- or 16-bit, grayscale or RGB, non-interlaced) and
single-channel PFM. Anything else is rejected rather than guessed.
"""

import json
import math
import os
import struct
import warnings
import zlib

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    ConstantDepthWarning,
    CorruptFileError,
    InvalidDepthError,
    UnsupportedFormatError,
)

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def validate_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValueError(f"expected (H, W, 1|3) image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    return img


def validate_depth(depth: np.ndarray) -> np.ndarray:
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise ValueError(f"expected (H, W) depth map, got shape {depth.shape}")
    if not np.all(np.isfinite(depth)) or np.any(depth < 0):
        raise ValueError("depth map must be finite and non-negative")
    return depth


def _read_png_ihdr(path: str) -> tuple[int, int, int, int, int]:
    """Parse the IHDR chunk: (width, height, bit_depth, colour_type, interlace)."""
    with open(path, "rb") as fh:
        head = fh.read(len(_PNG_MAGIC) + 8 + 13)
    if head[: len(_PNG_MAGIC)] != _PNG_MAGIC:
        raise UnsupportedFormatError(f"{path}: not a PNG file")
    if len(head) < len(_PNG_MAGIC) + 8 + 13 or head[12:16] != b"IHDR":
        raise CorruptFileError(f"{path}: missing IHDR chunk")
    w, h, bit_depth, colour, _comp, _filt, interlace = struct.unpack(
        ">IIBBBBB", head[16:29]
    )
    return w, h, bit_depth, colour, interlace


def _decode_png16_rgb(path: str, width: int, height: int) -> np.ndarray:
    """Decode a 16-bit RGB PNG manually (Pillow truncates these to 8 bit)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    pos = len(_PNG_MAGIC)
    idat = b""
    try:
        while pos + 8 <= len(blob):
            (length,) = struct.unpack(">I", blob[pos : pos + 4])
            tag = blob[pos + 4 : pos + 8]
            if tag == b"IDAT":
                idat += blob[pos + 8 : pos + 8 + length]
            if tag == b"IEND":
                break
            pos += 12 + length
        raw = zlib.decompress(idat)
    except (zlib.error, struct.error) as exc:
        raise CorruptFileError(f"{path}: bad PNG stream ({exc})") from exc

    bpp = 6  # bytes per pixel: 3 channels x 2 bytes
    row_bytes = width * bpp
    if len(raw) != height * (1 + row_bytes):
        raise CorruptFileError(f"{path}: truncated PNG pixel data")

    out = bytearray(height * row_bytes)
    prev = bytearray(row_bytes)
    for r in range(height):
        base = r * (1 + row_bytes)
        filt = raw[base]
        line = bytearray(raw[base + 1 : base + 1 + row_bytes])
        if filt == 1:  # Sub
            for i in range(bpp, row_bytes):
                line[i] = (line[i] + line[i - bpp]) & 0xFF
        elif filt == 2:  # Up
            for i in range(row_bytes):
                line[i] = (line[i] + prev[i]) & 0xFF
        elif filt == 3:  # Average
            for i in range(row_bytes):
                left = line[i - bpp] if i >= bpp else 0
                line[i] = (line[i] + (left + prev[i]) // 2) & 0xFF
        elif filt == 4:  # Paeth
            for i in range(row_bytes):
                a = line[i - bpp] if i >= bpp else 0
                b = prev[i]
                c = prev[i - bpp] if i >= bpp else 0
                p = a + b - c
                pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
                pred = a if (pa <= pb and pa <= pc) else (b if pb <= pc else c)
                line[i] = (line[i] + pred) & 0xFF
        elif filt != 0:
            raise CorruptFileError(f"{path}: unknown PNG filter {filt}")
        out[r * row_bytes : (r + 1) * row_bytes] = line
        prev = line
    arr = np.frombuffer(bytes(out), dtype=">u2").reshape(height, width, 3)
    return arr.astype(np.uint16)


def load_image(path: str) -> np.ndarray:
    """Load a PNG image as float64 in [0, 1], preserving channel count.

    Raises FileNotFoundError for a missing file, UnsupportedFormatError for
    formats outside 8/16-bit grayscale/RGB PNG, and CorruptFileError when
    the stream cannot be decoded.
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(path)
    w, h, bit_depth, colour, interlace = _read_png_ihdr(path)
    if colour not in (0, 2):
        raise UnsupportedFormatError(
            f"{path}: PNG colour type {colour} not supported (grayscale or RGB only)"
        )
    if bit_depth not in (8, 16):
        raise UnsupportedFormatError(f"{path}: PNG bit depth {bit_depth} not supported")
    if interlace != 0:
        raise UnsupportedFormatError(f"{path}: interlaced PNG not supported")

    if bit_depth == 16 and colour == 2:
        arr = _decode_png16_rgb(path, w, h)
    else:
        try:
            with Image.open(path) as im:
                im.load()
                arr = np.asarray(im)
        except (UnidentifiedImageError, OSError, SyntaxError) as exc:
            raise CorruptFileError(f"{path}: cannot decode PNG ({exc})") from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    scale = 65535.0 if bit_depth == 16 else 255.0
    return arr.astype(np.float64) / scale


def save_image(img: np.ndarray, path: str) -> None:
    """Clamp to [0, 1], quantize to 8 bit (round half up) and write a PNG."""
    img = validate_image(img)
    q = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    if q.shape[2] == 1:
        Image.fromarray(q[:, :, 0], mode="L").save(path, format="PNG")
    else:
        Image.fromarray(q, mode="RGB").save(path, format="PNG")


def save_depth_png(depth: np.ndarray, path: str) -> None:
    """Write a depth map as 16-bit grayscale PNG, scaled so max maps to 65535."""
    depth = validate_depth(depth)
    top = float(depth.max())
    scaled = depth / top if top > 0 else depth
    q = np.floor(scaled * 65535.0 + 0.5).astype(np.uint16)
    Image.fromarray(q).save(path, format="PNG")


def _load_pfm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline().strip()
        if header == b"PF":
            raise UnsupportedFormatError(f"{path}: colour PFM not supported")
        if header != b"Pf":
            raise UnsupportedFormatError(f"{path}: not a PFM file")
        dims = fh.readline().split()
        try:
            w, hgt = int(dims[0]), int(dims[1])
            scale = float(fh.readline().strip())
        except (ValueError, IndexError) as exc:
            raise CorruptFileError(f"{path}: malformed PFM header") from exc
        endian = "<" if scale < 0 else ">"
        data = np.frombuffer(fh.read(), dtype=endian + "f4")
    if data.size != w * hgt:
        raise CorruptFileError(f"{path}: truncated PFM payload")
    # PFM stores rows bottom-to-top
    return data.reshape(hgt, w)[::-1].astype(np.float64)


def load_depth(path: str, depth_scale: float = 1.0) -> np.ndarray:
    """Load a depth map from 16-bit grayscale PNG or single-channel PFM.

    Raw values are min-max normalized to [0, 1] per image and multiplied by
    `depth_scale`. A constant map normalizes to all zeros and raises a
    ConstantDepthWarning.
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(path)
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic in (b"Pf", b"PF"):
        raw = _load_pfm(path)
        if not np.all(np.isfinite(raw)):
            raise CorruptFileError(f"{path}: PFM contains non-finite values")
        if np.any(raw < 0):
            raise InvalidDepthError(f"{path}: PFM contains negative depth values")
    else:
        w, h, bit_depth, colour, _ = _read_png_ihdr(path)
        if colour != 0 or bit_depth != 16:
            raise UnsupportedFormatError(
                f"{path}: depth PNG must be 16-bit grayscale"
            )
        raw = load_image(path)[:, :, 0] * 65535.0
    lo, hi = float(raw.min()), float(raw.max())
    if hi == lo:
        warnings.warn(
            f"{path}: constant depth map, normalizing to zeros", ConstantDepthWarning
        )
        return np.zeros_like(raw)
    return (raw - lo) / (hi - lo) * depth_scale


def generate_scene(seed: int, height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Procedurally generate a paired (clear image, depth map).

    The clear image is a smooth colour gradient overlaid with 2-5 random
    axis-aligned rectangles; depth is a directional ramp plus a constant
    offset per rectangle. Deterministic in (seed, height, width); image and
    depth both lie in [0, 1]. Piecewise-constant rectangle depths create the
    depth-dependent haze edges the estimator has to learn.
    """
    if height < 8 or width < 8:
        raise ValueError("scene dimensions must be at least 8x8")
    rng = np.random.default_rng(seed)

    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    theta = rng.uniform(0.0, 2.0 * math.pi)
    proj = math.cos(theta) * xx + math.sin(theta) * yy
    proj = (proj - proj.min()) / max(proj.max() - proj.min(), 1e-12)

    c0 = rng.uniform(0.0, 1.0, size=3)
    c1 = rng.uniform(0.0, 1.0, size=3)
    img = c0[None, None, :] + proj[:, :, None] * (c1 - c0)[None, None, :]

    phi = rng.uniform(0.0, 2.0 * math.pi)
    ramp = math.cos(phi) * xx + math.sin(phi) * yy
    ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-12)
    depth = 0.6 * ramp
    offsets = np.zeros((height, width))

    for _ in range(int(rng.integers(2, 6))):
        rh = int(rng.integers(2, max(3, height // 2) + 1))
        rw = int(rng.integers(2, max(3, width // 2) + 1))
        r0 = int(rng.integers(0, height - rh + 1))
        c0_ = int(rng.integers(0, width - rw + 1))
        colour = rng.uniform(0.0, 1.0, size=3)
        img[r0 : r0 + rh, c0_ : c0_ + rw, :] = colour
        offsets[r0 : r0 + rh, c0_ : c0_ + rw] = rng.uniform(0.0, 0.4)

    depth = np.clip(depth + offsets, 0.0, 1.0)
    return np.clip(img, 0.0, 1.0), depth


def load_manifest(path: str) -> list[dict[str, str]]:
    """Read a JSON-lines dataset manifest of {"clear": ..., "depth": ...} records.

    Relative paths are resolved against the manifest's directory.
    """
    base = os.path.dirname(os.path.abspath(path))
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                clear, depth = rec["clear"], rec["depth"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CorruptFileError(f"{path}:{lineno}: bad manifest record") from exc
            records.append(
                {
                    "clear": clear if os.path.isabs(clear) else os.path.join(base, clear),
                    "depth": depth if os.path.isabs(depth) else os.path.join(base, depth),
                }
            )
    return records
