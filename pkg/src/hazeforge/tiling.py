"""Patch splitting/merging and 2x resampling for the hierarchical dataflows.

All helpers treat the last two axes as (height, width), so they work on
``C x H x W`` and ``N x C x H x W`` tensors alike.  Split/concat also accept
numpy arrays laid out the same way.
"""
from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ShapeError

WIDTH = "width"
HEIGHT = "height"
_AXIS = {WIDTH: -1, HEIGHT: -2}


def _require_even(x, axis: int, what: str):
    size = x.shape[axis]
    if size % 2:
        raise ShapeError(f"{what} needs an even {'width' if axis == -1 else 'height'}, got {size}")
    return size // 2


def split_vertical(x):
    """Cut along a vertical line into (left, right) halves."""
    half = _require_even(x, -1, "split_vertical")
    return x[..., :half], x[..., half:]


def split_horizontal(x):
    """Cut along a horizontal line into (top, bottom) halves."""
    half = _require_even(x, -2, "split_horizontal")
    return x[..., :half, :], x[..., half:, :]


def concat_spatial(a, b, axis: str = WIDTH):
    """Join two spatially adjacent maps; ``a`` takes the leading (left/top) region."""
    if axis not in _AXIS:
        raise ValueError(f"axis must be 'width' or 'height', got {axis!r}")
    dim = _AXIS[axis]
    other = -2 if dim == -1 else -1
    if a.shape[:-2] != b.shape[:-2] or a.shape[other] != b.shape[other]:
        raise ShapeError(
            f"cannot concatenate {tuple(a.shape)} and {tuple(b.shape)} along {axis}"
        )
    if isinstance(a, np.ndarray):
        return np.concatenate([a, b], axis=dim)
    return torch.cat([a, b], dim=dim)


def merge_vertical(left, right):
    return concat_spatial(left, right, WIDTH)


def merge_horizontal(top, bottom):
    return concat_spatial(top, bottom, HEIGHT)


def _resample(x, scale: float):
    squeeze = x.dim() == 3
    xb = x.unsqueeze(0) if squeeze else x
    out = F.interpolate(xb, scale_factor=scale, mode="bilinear", align_corners=False)
    return out[0] if squeeze else out


def downsample2(x: torch.Tensor) -> torch.Tensor:
    """Bilinear 2x reduction; with half-pixel alignment each output is a 2x2 cell mean."""
    _require_even(x, -2, "downsample2")
    _require_even(x, -1, "downsample2")
    return _resample(x, 0.5)


def upsample2(x: torch.Tensor) -> torch.Tensor:
    """Bilinear 2x enlargement (half-pixel aligned, edge-clamped)."""
    return _resample(x, 2.0)
