"""PNG import/export for float images and transmission maps."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image as PILImage

PNG_COMPRESS_LEVEL = 3


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Quantize ``[0, 1]`` floats to 8 bits, rounding halves up."""
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def from_uint8(arr: np.ndarray) -> np.ndarray:
    return arr.astype(np.float32) / 255.0


def quantize(img: np.ndarray) -> np.ndarray:
    """Snap a float image onto the 8-bit grid and back."""
    return to_uint8(img).astype(np.float64) / 255.0


def save_image(path, img: np.ndarray):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = img if img.dtype == np.uint8 else to_uint8(img)
    PILImage.fromarray(arr).save(path, compress_level=PNG_COMPRESS_LEVEL)


def load_image(path) -> np.ndarray:
    """Read a PNG as an ``H x W x 3`` float32 array in ``[0, 1]``."""
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"))
    return from_uint8(arr)


def load_image_shape(path) -> tuple[int, int]:
    with PILImage.open(path) as im:
        w, h = im.size
    return h, w


def save_transmission(path, t: np.ndarray):
    """Write a transmission map as a single-channel 16-bit PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.floor(np.clip(t, 0.0, 1.0) * 65535.0 + 0.5).astype(np.uint16)
    PILImage.fromarray(arr).save(path, compress_level=PNG_COMPRESS_LEVEL)


def load_transmission(path) -> np.ndarray:
    with PILImage.open(path) as im:
        arr = np.asarray(im, dtype=np.float64)
    return arr / 65535.0
