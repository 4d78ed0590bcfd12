"""Fidelity metrics and inference timing."""
from __future__ import annotations

import math
import os
import platform
import time

import numpy as np
import torch
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError
from .imageio import quantize

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _as_numpy(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def psnr(pred, gt, peak: float = 1.0, quantized: bool = False) -> float:
    """Peak signal-to-noise ratio in dB, capped at 100 dB for (near) zero error.

    With ``quantized`` both images are snapped to 8 bits first (peak must be 1).
    """
    pred, gt = _as_numpy(pred), _as_numpy(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"psnr: shapes {pred.shape} and {gt.shape} differ")
    if peak <= 0:
        raise ValueError("peak must be positive")
    if quantized:
        pred, gt = quantize(pred), quantize(gt)
    mse = float(np.mean((pred - gt) ** 2))
    if mse < 1e-10:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(peak**2 / mse))


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable 'valid' filtering of a 2-D array."""
    x = sliding_window_view(x, g.size, axis=0) @ g
    return sliding_window_view(x, g.size, axis=1) @ g


def _ssim_channel(a: np.ndarray, b: np.ndarray, g: np.ndarray) -> float:
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a**2
    var_b = _filter_valid(b * b, g) - mu_b**2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(pred, gt, quantized: bool = False) -> float:
    """Mean SSIM (11x11 Gaussian window, sigma 1.5, data range 1) averaged over channels.

    Accepts ``H x W`` or ``H x W x C`` arrays; only windows fully inside the
    image contribute.
    """
    pred, gt = _as_numpy(pred), _as_numpy(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"ssim: shapes {pred.shape} and {gt.shape} differ")
    if min(pred.shape[:2]) < SSIM_WINDOW:
        raise ShapeError(f"ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {pred.shape[:2]}")
    if quantized:
        pred, gt = quantize(pred), quantize(gt)
    if pred.ndim == 2:
        pred, gt = pred[..., None], gt[..., None]
    g = _gaussian_window()
    vals = [_ssim_channel(pred[..., c], gt[..., c], g) for c in range(pred.shape[-1])]
    return float(np.mean(vals))


def hardware_descriptor(device: torch.device | str = "cpu") -> dict:
    device = torch.device(device)
    desc = {
        "device": str(device),
        "platform": platform.platform(),
        "processor": platform.processor() or platform.machine(),
        "cpu_count": os.cpu_count(),
        "torch_threads": torch.get_num_threads(),
        "torch": torch.__version__,
    }
    if device.type == "cuda":
        desc["gpu"] = torch.cuda.get_device_name(device)
    return desc


@torch.no_grad()
def benchmark_runtime(forward, height: int, width: int, warmup: int = 2, reps: int = 10,
                      seed: int = 0, device="cpu", dtype=torch.float32) -> dict:
    """Time ``reps`` forward passes on one seeded random image after ``warmup`` untimed ones."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    device = torch.device(device)
    gen = torch.Generator().manual_seed(seed)
    x = torch.rand(1, 3, height, width, generator=gen, dtype=dtype).to(device)

    def sync():
        if device.type == "cuda":
            torch.cuda.synchronize(device)

    for _ in range(warmup):
        forward(x)
    sync()
    times = []
    first = None
    identical = True
    for _ in range(reps):
        t0 = time.perf_counter()
        out = forward(x)
        sync()
        times.append(time.perf_counter() - t0)
        if first is None:
            first = out
        else:
            identical = identical and torch.equal(first, out)
    times = np.asarray(times)
    return {
        "mean_s": float(times.mean()),
        "std_s": float(times.std()),
        "per_image_s": float(times.mean()),
        "reps": reps,
        "warmup": warmup,
        "height": height,
        "width": width,
        "outputs_identical": identical,
        "hardware": hardware_descriptor(device),
    }
