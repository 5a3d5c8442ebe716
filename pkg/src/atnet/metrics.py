"""Full-reference image quality metrics.

PSNR uses MAX = 1.0 since images live in [0, 1]; identical inputs return
the +inf sentinel (serialized as the string "inf" in reports).  SSIM is the
standard configuration: 11x11 Gaussian window with sigma 1.5, K1 = 0.01,
K2 = 0.03, L = 1, local statistics on valid window positions, averaged over
channels.
"""

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .image import Image

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_same_shape(a: Image, b: Image):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def psnr(a: Image, b: Image) -> float:
    """Peak signal-to-noise ratio in dB; math.inf when the images match."""
    _check_same_shape(a, b)
    mse = float(np.mean((a.data - b.data) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    w = np.exp(-(r * r) / (2.0 * sigma * sigma))
    return w / w.sum()


def _filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    # separable correlation, valid positions only
    t = sliding_window_view(img, win.size, axis=1) @ win
    return sliding_window_view(t, win.size, axis=0) @ win


def _ssim_channel(x: np.ndarray, y: np.ndarray, win: np.ndarray) -> float:
    c1 = SSIM_K1 * SSIM_K1
    c2 = SSIM_K2 * SSIM_K2
    mu_x = _filter_valid(x, win)
    mu_y = _filter_valid(y, win)
    sxx = _filter_valid(x * x, win) - mu_x * mu_x
    syy = _filter_valid(y * y, win) - mu_y * mu_y
    sxy = _filter_valid(x * y, win) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * sxy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim(a: Image, b: Image) -> float:
    """Mean local SSIM in [-1, 1], averaged over channels."""
    _check_same_shape(a, b)
    if min(a.height, a.width) < SSIM_WINDOW:
        raise ValueError(
            f"image {a.height}x{a.width} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )
    win = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    vals = [
        _ssim_channel(a.data[:, :, c], b.data[:, :, c], win) for c in range(a.channels)
    ]
    return float(np.mean(vals))
