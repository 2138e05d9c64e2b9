"""Image quality measures used for calibration, training and reporting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .image import Image

# Zero-MSE pairs report this finite sentinel instead of infinity so reports
# stay sortable.
PSNR_CAP_DB = 100.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(a: Image, b: Image, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, MSE taken over all channels jointly."""
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    if peak <= 0:
        raise ValueError(f"psnr: peak must be positive, got {peak}")
    diff = a.data - b.data
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(10.0 * np.log10(peak * peak / mse))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = size // 2
    coords = np.arange(size, dtype=np.float64) - half
    one_d = np.exp(-(coords * coords) / (2.0 * sigma * sigma))
    window = np.outer(one_d, one_d)
    return window / window.sum()


def _windowed_valid(plane: np.ndarray, window: np.ndarray) -> np.ndarray:
    k = window.shape[0]
    view = np.lib.stride_tricks.sliding_window_view(plane, (k, k))
    return np.tensordot(view, window, axes=([2, 3], [0, 1]))


def ssim(a: Image, b: Image) -> float:
    """Mean structural similarity over valid 11x11 Gaussian windows.

    Follows the common convention: Gaussian window sigma 1.5, stabilizers
    K1 = 0.01 and K2 = 0.03, dynamic range 1.0.  Color inputs are reduced to
    grayscale by channel averaging first.  The mean is clamped to [-1, 1] to
    absorb last-ulp float noise; structurally inverted inputs go negative.
    """
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if a.height < SSIM_WINDOW or a.width < SSIM_WINDOW:
        raise ValueError(
            f"ssim: image {a.height}x{a.width} smaller than the "
            f"{SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    x = a.to_gray().data[0]
    y = b.to_gray().data[0]
    window = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)

    mu_x = _windowed_valid(x, window)
    mu_y = _windowed_valid(y, window)
    var_x = np.maximum(_windowed_valid(x * x, window) - mu_x * mu_x, 0.0)
    var_y = np.maximum(_windowed_valid(y * y, window) - mu_y * mu_y, 0.0)
    cov = _windowed_valid(x * y, window) - mu_x * mu_y

    c1 = SSIM_K1 * SSIM_K1
    c2 = SSIM_K2 * SSIM_K2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    value = float(np.mean(num / den))
    return min(1.0, max(-1.0, value))


def tv_of_array(arr: np.ndarray) -> float:
    """Anisotropic total variation of a (channels, h, w) array, per pixel.

    Sum of absolute horizontal and vertical forward differences over all
    channels, divided by the pixel count h*w.
    """
    height, width = arr.shape[-2], arr.shape[-1]
    dx = float(np.abs(arr[..., :, 1:] - arr[..., :, :-1]).sum())
    dy = float(np.abs(arr[..., 1:, :] - arr[..., :-1, :]).sum())
    return (dx + dy) / (height * width)


def total_variation(a: Image) -> float:
    return tv_of_array(a.data)


@dataclass(frozen=True)
class MetricReport:
    """Aggregate PSNR/SSIM plus the per-image breakdown behind the means."""

    psnr: float
    ssim: float
    per_image: tuple[tuple[str, float, float], ...]

    @staticmethod
    def from_rows(rows: Iterable[Sequence]) -> "MetricReport":
        frozen = tuple((str(i), float(p), float(s)) for i, p, s in rows)
        if not frozen:
            raise ValueError("metric report needs at least one image")
        mean_psnr = float(np.mean([row[1] for row in frozen]))
        mean_ssim = float(np.mean([row[2] for row in frozen]))
        return MetricReport(mean_psnr, mean_ssim, frozen)
