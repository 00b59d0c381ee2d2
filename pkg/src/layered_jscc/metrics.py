"""Distortion metrics in pixel space (MAX = 255)."""

from __future__ import annotations

import numpy as np
import torch
from scipy import ndimage

MAX_PIXEL = 255.0
PSNR_CAP = 100.0
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


def mse(x, x_hat) -> float:
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_hat.shape}")
    return float(np.mean((x - x_hat) ** 2))


def psnr_from_mse(m, max_value: float = MAX_PIXEL):
    """``10 log10(MAX² / MSE)``; an MSE of zero maps to +inf."""
    m = np.asarray(m, dtype=np.float64)
    with np.errstate(divide="ignore"):
        out = 10.0 * np.log10(max_value ** 2 / m)
    return float(out) if out.ndim == 0 else out


def psnr(x, x_hat) -> float:
    return psnr_from_mse(mse(x, x_hat))


def cap_psnr(values, cap: float = PSNR_CAP) -> np.ndarray:
    return np.minimum(np.asarray(values, dtype=np.float64), cap)


def to_pixels(x: torch.Tensor) -> torch.Tensor:
    """[0, 1] float -> integer-valued pixels, clamped and rounded half-up."""
    return torch.floor(x.clamp(0.0, 1.0) * MAX_PIXEL + 0.5)


def batch_psnr(x_pixels: torch.Tensor, x_hat: torch.Tensor) -> np.ndarray:
    """Per-image PSNR of a reconstruction batch against the uint8 source batch.

    ``x_pixels`` and ``x_hat`` share a layout; ``x_hat`` is in [0, 1].
    """
    err = (x_pixels.to(torch.float64) - to_pixels(x_hat).to(torch.float64)) ** 2
    per_image = err.flatten(1).mean(dim=1).numpy()
    return psnr_from_mse(per_image)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - size // 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    out = ndimage.correlate1d(img, win, axis=0, mode="constant")
    out = ndimage.correlate1d(out, win, axis=1, mode="constant")
    h = len(win) // 2
    return out[h:-h, h:-h]


def _ssim_components(x: np.ndarray, y: np.ndarray, win: np.ndarray, data_range: float):
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mu_x, mu_y = _filter_valid(x, win), _filter_valid(y, win)
    sxx = _filter_valid(x * x, win) - mu_x ** 2
    syy = _filter_valid(y * y, win) - mu_y ** 2
    sxy = _filter_valid(x * y, win) - mu_x * mu_y
    cs = (2 * sxy + c2) / (sxx + syy + c2)
    lum = (2 * mu_x * mu_y + c1) / (mu_x ** 2 + mu_y ** 2 + c1)
    return float(np.mean(lum * cs)), float(np.mean(cs))


def ms_ssim(x, x_hat, scales: int = 5, data_range: float = MAX_PIXEL,
            reduced: bool = False, win_size: int = 11) -> float:
    """Multi-scale SSIM of two ``[H, W]`` or ``[H, W, C]`` images.

    The 5-scale variant needs each side larger than ``(win_size - 1) * 16``
    (160 px). With ``reduced=True`` the number of scales is lowered to what
    the image supports and the scale weights are renormalized.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(x_hat, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if x.ndim == 2:
        x, y = x[..., None], y[..., None]
    side = min(x.shape[:2])
    if reduced:
        while scales > 1 and side <= (win_size - 1) * 2 ** (scales - 1):
            scales -= 1
    if scales < 1 or side <= (win_size - 1) * 2 ** (scales - 1):
        raise ValueError(f"image side {side} is too small for {scales}-scale MS-SSIM")
    weights = np.asarray(MS_SSIM_WEIGHTS[:scales])
    weights = weights / weights.sum()
    win = _gaussian_window(win_size)

    per_channel = []
    for ch in range(x.shape[2]):
        a, b = x[..., ch], y[..., ch]
        values = []
        for s in range(scales):
            ssim_val, cs = _ssim_components(a, b, win, data_range)
            values.append(max(ssim_val if s == scales - 1 else cs, 0.0))
            if s < scales - 1:
                a, b = _downsample(a), _downsample(b)
        per_channel.append(float(np.prod(np.power(values, weights))))
    return float(np.mean(per_channel))


def _downsample(img: np.ndarray) -> np.ndarray:
    h, w = img.shape[0] // 2 * 2, img.shape[1] // 2 * 2
    img = img[:h, :w]
    return 0.25 * (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2])
