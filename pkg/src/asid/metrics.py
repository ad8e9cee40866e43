"""Luma conversion and Y-channel PSNR / SSIM in the usual SR benchmark convention."""

from __future__ import annotations

import math

import numpy as np
from scipy.signal import convolve2d

from .errors import ContractError, DimensionError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


def rgb_to_y(img: np.ndarray) -> np.ndarray:
    """BT.601 studio-range luma of an (H, W, 3) image in [0, 1]; result in [16/255, 235/255]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[-1] != 3:
        raise DimensionError(f"rgb_to_y expects (H, W, 3), got {img.shape}")
    return (img @ np.array([65.481, 128.553, 24.966]) + 16.0) / 255.0


def quantize(img: np.ndarray) -> np.ndarray:
    """Round to the 8-bit grid, as if written to and read back from an image file."""
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def crop_border(plane: np.ndarray, border: int) -> np.ndarray:
    if border == 0:
        out = plane
    else:
        out = plane[border:-border, border:-border]
    if out.shape[0] < 1 or out.shape[1] < 1:
        raise ContractError(f"cropping {border} pixels leaves nothing of a {plane.shape[:2]} image")
    return out


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR in dB between planes in [0, 1]; identical inputs give ``math.inf``."""
    if a.shape != b.shape:
        raise DimensionError(f"psnr: shapes differ {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ContractError("psnr of an empty plane")
    mse = float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))
    return math.inf if mse == 0.0 else 10.0 * math.log10(1.0 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    g = np.exp(-((np.arange(size) - (size - 1) / 2) ** 2) / (2 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM over the valid region of an 11x11 Gaussian window, on the 0-255 scale."""
    if a.shape != b.shape:
        raise DimensionError(f"ssim: shapes differ {a.shape} vs {b.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise ContractError(f"ssim needs planes of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape}")
    x = np.asarray(a, np.float64) * 255.0
    y = np.asarray(b, np.float64) * 255.0
    c1, c2 = (SSIM_K1 * 255) ** 2, (SSIM_K2 * 255) ** 2
    win = gaussian_window()

    def filt(z):
        return convolve2d(z, win, mode="valid")

    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    smap = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
    return float(np.clip(smap.mean(), -1.0, 1.0))


def _eval_planes(hr: np.ndarray, sr: np.ndarray, scale: int, requantize: bool):
    if hr.shape != sr.shape:
        raise DimensionError(f"reference {hr.shape} and candidate {sr.shape} differ in size")
    if requantize:
        hr, sr = quantize(hr), quantize(sr)
    return crop_border(rgb_to_y(hr), scale), crop_border(rgb_to_y(sr), scale)


def psnr_y(hr: np.ndarray, sr: np.ndarray, scale: int, requantize: bool = True) -> float:
    """PSNR on luma after cropping ``scale`` pixels from each border."""
    return psnr(*_eval_planes(hr, sr, scale, requantize))


def ssim_y(hr: np.ndarray, sr: np.ndarray, scale: int, requantize: bool = True) -> float:
    return ssim(*_eval_planes(hr, sr, scale, requantize))


def format_db(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.6g}"
