"""Atmospheric scattering model and its per-timestep haze decomposition.

A hazy observation splits into an attenuated component J*T_r with
transmission T_r = exp(-sigma*Z) and an accumulated airlight component
h(Z) = A * integral_0^Z exp(-sigma*z) dz = (A/sigma) * (1 - exp(-sigma*Z)).
Re-indexing the depth integral over T equal segments gives the per-timestep
haze h_t and increments dh_t used by the diffusion forward process.
"""

from dataclasses import dataclass

import numpy as np

from .io import validate_depth, validate_image


@dataclass(frozen=True)
class HazeParams:
    """Airlight A (scalar or per-channel triple) and scattering coefficient sigma."""

    airlight: float | tuple[float, float, float]
    scattering: float

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.airlight, dtype=np.float64))
        if a.shape not in ((1,), (3,)):
            raise ValueError("airlight must be a scalar or a length-3 triple")
        if np.any(a <= 0) or np.any(a > 2):
            raise ValueError("airlight components must lie in (0, 2]")
        if not self.scattering > 0:
            raise ValueError("scattering coefficient must be positive")

    def airlight_map(self) -> np.ndarray:
        """Airlight broadcastable over an (H, W, 3) raster."""
        a = np.atleast_1d(np.asarray(self.airlight, dtype=np.float64))
        if a.shape == (1,):
            a = np.repeat(a, 3)
        return a.reshape(1, 1, 3)


@dataclass(frozen=True)
class HazeDecomposition:
    attenuated: np.ndarray  # J * T_r
    haze_total: np.ndarray  # fully accumulated airlight
    hazy: np.ndarray        # attenuated + haze_total, exact by construction
    transmission: np.ndarray  # (H, W, 1), values in (0, 1]


def transmission(depth: np.ndarray, sigma: float) -> np.ndarray:
    """Per-pixel transmission exp(-sigma * Z), shape (H, W, 1)."""
    depth = validate_depth(depth)
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return np.exp(-sigma * depth)[:, :, None]


def haze_total(depth: np.ndarray, p: HazeParams) -> np.ndarray:
    """Fully accumulated haze (A/sigma) * (1 - exp(-sigma*Z)), shape (H, W, 3)."""
    depth = validate_depth(depth)
    s = p.scattering
    profile = 1.0 - np.exp(-s * depth)
    return (p.airlight_map() / s) * profile[:, :, None]


def haze_at_step(depth: np.ndarray, p: HazeParams, t: int, total_steps: int) -> np.ndarray:
    """Haze accumulated through the first t of total_steps depth segments.

    Equals (A/sigma) * (1 - exp(-sigma * (t/T) * Z)); zero at t = 0 and the
    full accumulation at t = T.
    """
    depth = validate_depth(depth)
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    if not 0 <= t <= total_steps:
        raise ValueError(f"t={t} outside [0, {total_steps}]")
    s = p.scattering
    profile = 1.0 - np.exp(-(s * (t / total_steps)) * depth)
    return (p.airlight_map() / s) * profile[:, :, None]


def haze_increment(depth: np.ndarray, p: HazeParams, t: int, total_steps: int) -> np.ndarray:
    """Haze added by segment t: h_t - h_{t-1}, non-negative everywhere."""
    depth = validate_depth(depth)
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    if not 1 <= t <= total_steps:
        raise ValueError(f"t={t} outside [1, {total_steps}]")
    s = p.scattering
    lo = np.exp(-(s * ((t - 1) / total_steps)) * depth)
    hi = np.exp(-(s * (t / total_steps)) * depth)
    return (p.airlight_map() / s) * (lo - hi)[:, :, None]


def synthesize_hazy(clear: np.ndarray, depth: np.ndarray, p: HazeParams) -> HazeDecomposition:
    """Compose a hazy image from a clear image and its depth map."""
    clear = validate_image(clear)
    depth = validate_depth(depth)
    if clear.shape[:2] != depth.shape:
        raise ValueError(
            f"image {clear.shape[:2]} and depth {depth.shape} dimensions differ"
        )
    t_r = transmission(depth, p.scattering)
    attenuated = clear * t_r
    h_total = haze_total(depth, p)
    return HazeDecomposition(
        attenuated=attenuated,
        haze_total=h_total,
        hazy=attenuated + h_total,
        transmission=t_r,
    )


def haze_total_quadrature(
    z: float, airlight: float, sigma: float, panels: int = 1_000_000
) -> float:
    """Trapezoidal quadrature of A * integral_0^z exp(-sigma*u) du.

    Independent numerical oracle for the closed-form haze accumulation; kept
    deliberately free of the closed form it checks.
    """
    if z < 0:
        raise ValueError("depth must be non-negative")
    if z == 0:
        return 0.0
    grid = np.linspace(0.0, z, panels + 1)
    f = airlight * np.exp(-sigma * grid)
    dz = z / panels
    return float(dz * (0.5 * f[0] + f[1:-1].sum() + 0.5 * f[-1]))
