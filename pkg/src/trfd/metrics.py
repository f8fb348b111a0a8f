"""Reconstruction quality metrics: PSNR, SSIM, NRMSE."""

from __future__ import annotations

import numpy as np
from scipy.signal import convolve2d

from .errors import NumericError, ShapeError


def psnr(x: np.ndarray, ref: np.ndarray, peak: float = 1.0) -> float:
    """10·log10(peak² / MSE); +inf when the inputs are identical."""
    x, ref = np.asarray(x, dtype=np.float64), np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ShapeError(f"shape mismatch: {x.shape} vs {ref.shape}")
    if peak <= 0:
        raise ShapeError(f"peak must be positive, got {peak}")
    mse = np.mean((x - ref) ** 2)
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak ** 2 / mse))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords ** 2) / (2 * sigma ** 2))
    window = np.outer(g, g)
    return window / window.sum()


def _ssim_2d(x: np.ndarray, ref: np.ndarray, k1: float, k2: float,
             dynamic_range: float) -> float:
    window = _gaussian_window()
    c1 = (k1 * dynamic_range) ** 2
    c2 = (k2 * dynamic_range) ** 2
    mu_x = convolve2d(x, window, mode="valid")
    mu_y = convolve2d(ref, window, mode="valid")
    xx = convolve2d(x * x, window, mode="valid") - mu_x ** 2
    yy = convolve2d(ref * ref, window, mode="valid") - mu_y ** 2
    xy = convolve2d(x * ref, window, mode="valid") - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (xx + yy + c2)
    return float(np.mean(num / den))


def ssim(x: np.ndarray, ref: np.ndarray, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean local SSIM, 11×11 Gaussian window (σ=1.5), dynamic range 1 after
    clipping to [0, 1]; third-order inputs are averaged over mode-3 slices."""
    x, ref = np.asarray(x, dtype=np.float64), np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ShapeError(f"shape mismatch: {x.shape} vs {ref.shape}")
    if x.ndim not in (2, 3):
        raise ShapeError(f"SSIM expects a 2-D or 3-D tensor, got ndim={x.ndim}")
    if x.shape[0] < 11 or x.shape[1] < 11:
        raise ShapeError(f"spatial dims {x.shape[:2]} too small for an 11×11 window")
    x = np.clip(x, 0.0, 1.0)
    ref = np.clip(ref, 0.0, 1.0)
    if x.ndim == 2:
        return _ssim_2d(x, ref, k1, k2, 1.0)
    return float(np.mean([_ssim_2d(x[:, :, c], ref[:, :, c], k1, k2, 1.0)
                          for c in range(x.shape[2])]))


def nrmse(x: np.ndarray, ref: np.ndarray) -> float:
    """Frobenius norm of the error divided by the Frobenius norm of the reference."""
    x, ref = np.asarray(x, dtype=np.float64), np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ShapeError(f"shape mismatch: {x.shape} vs {ref.shape}")
    denom = np.linalg.norm(ref)
    if denom == 0.0:
        raise NumericError("reference norm is zero")
    return float(np.linalg.norm(x - ref) / denom)
