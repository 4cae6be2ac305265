"""Full-reference quality metrics for paired synthetic evaluation.

PSNR assumes [0, 1] data; SSIM here uses plain 8x8 non-overlapping windows
on the channel-mean grayscale with the standard stabilizers, so its numbers
are comparable only within this repository.
"""

import csv
import json
import math

import numpy as np

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
SSIM_WINDOW = 8


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10*log10(1/MSE) in decibels; +inf for identical images."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity over non-overlapping 8x8 grayscale windows."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 3:
        a, b = a.mean(axis=2), b.mean(axis=2)
    h, w = a.shape
    win = SSIM_WINDOW
    if h < win or w < win:
        raise ValueError(f"image {h}x{w} smaller than the {win}x{win} window")
    nh, nw = h // win, w // win
    ta = a[: nh * win, : nw * win].reshape(nh, win, nw, win)
    tb = b[: nh * win, : nw * win].reshape(nh, win, nw, win)
    mu_a = ta.mean(axis=(1, 3))
    mu_b = tb.mean(axis=(1, 3))
    var_a = ta.var(axis=(1, 3))
    var_b = tb.var(axis=(1, 3))
    cov = (ta * tb).mean(axis=(1, 3)) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float((num / den).mean())


def write_report(path_csv: str, path_json: str, rows: list[dict]) -> None:
    """Persist per-image metrics as CSV plus a JSON aggregate."""
    with open(path_csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["image", "psnr", "ssim"])
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in ("image", "psnr", "ssim")})
    finite = [r["psnr"] for r in rows if math.isfinite(r["psnr"])]
    aggregate = {
        "count": len(rows),
        "psnr_mean": float(np.mean(finite)) if finite else math.inf,
        "ssim_mean": float(np.mean([r["ssim"] for r in rows])) if rows else None,
    }
    with open(path_json, "w", encoding="utf-8") as fh:
        json.dump(aggregate, fh, indent=2)
