"""Atmospheric scattering model: haze synthesis and its analytic inverse.

Images are ``H x W x 3`` float arrays in ``[0, 1]``; transmission maps are
``H x W`` float arrays in ``[0, 1]``.  The observed hazy image is

    I = J * t + A * (1 - t)

with ``J`` the clear scene, ``t`` the transmission and ``A`` the global
atmospheric light.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError

DEFAULT_T_FLOOR = 1e-3


@dataclass(frozen=True)
class HazeFieldParams:
    """Recipe for a procedural, spatially varying transmission field."""

    seed: int = 0
    num_blobs: int = 4
    blob_sigma_range: tuple[float, float] = (8.0, 32.0)
    t_range: tuple[float, float] = (0.3, 0.9)

    def __post_init__(self):
        t_min, t_max = self.t_range
        if not (0.0 <= t_min <= 1.0 and 0.0 <= t_max <= 1.0):
            raise ConfigError(f"t_range {self.t_range} must lie inside [0, 1]")
        if not t_min < t_max:
            raise ConfigError(f"t_range {self.t_range} needs t_min < t_max")
        s_min, s_max = self.blob_sigma_range
        if not 0 < s_min < s_max:
            raise ConfigError(f"blob_sigma_range {self.blob_sigma_range} needs 0 < min < max")
        if self.num_blobs < 0:
            raise ConfigError("num_blobs must be non-negative")


def _as_light(A) -> np.ndarray:
    light = np.broadcast_to(np.asarray(A, dtype=np.float64), (3,))
    if np.any(light < 0) or np.any(light > 1):
        raise ConfigError(f"atmospheric light {light.tolist()} outside [0, 1]")
    return light


def _check_aligned(img: np.ndarray, t: np.ndarray):
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"expected an H x W x 3 image, got shape {img.shape}")
    if t.shape != img.shape[:2]:
        raise ShapeError(
            f"transmission map {t.shape} is misaligned with image {img.shape[:2]}"
        )


def synthesize_haze(J, t, A) -> np.ndarray:
    """Render a hazy observation of ``J`` under transmission ``t`` and light ``A``."""
    J = np.asarray(J, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    _check_aligned(J, t)
    light = _as_light(A)
    tt = t[..., None]
    return np.clip(J * tt + light * (1.0 - tt), 0.0, 1.0)


def invert_haze(I, t, A, t_floor: float = DEFAULT_T_FLOOR) -> np.ndarray:
    """Recover the clear scene from a hazy image given the true ``t`` and ``A``."""
    if not t_floor > 0:
        raise ConfigError("t_floor must be positive")
    I = np.asarray(I, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    _check_aligned(I, t)
    light = _as_light(A)
    tt = t[..., None]
    J = (I - light * (1.0 - tt)) / np.maximum(tt, t_floor)
    return np.clip(J, 0.0, 1.0)


def generate_transmission(height: int, width: int, params: HazeFieldParams) -> np.ndarray:
    """Sum seeded Gaussian blobs of haze density and map them onto ``params.t_range``.

    Dense regions of the blob field get low transmission.  A flat field
    (including ``num_blobs == 0``) yields the constant ``t_max``.
    """
    if height < 1 or width < 1:
        raise ShapeError(f"transmission map needs positive size, got {height}x{width}")
    t_min, t_max = params.t_range
    rng = np.random.default_rng(params.seed)
    yy = np.arange(height, dtype=np.float64)[:, None]
    xx = np.arange(width, dtype=np.float64)[None, :]

    density = np.zeros((height, width), dtype=np.float64)
    for _ in range(params.num_blobs):
        cy = rng.uniform(0, height)
        cx = rng.uniform(0, width)
        sigma = rng.uniform(*params.blob_sigma_range)
        amp = rng.uniform(0.5, 1.0)
        density += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma**2))

    lo, hi = density.min(), density.max()
    if hi - lo <= 0:
        return np.full((height, width), t_max, dtype=np.float64)
    return t_max - (density - lo) / (hi - lo) * (t_max - t_min)
