"""PSNR, SSIM and interpolation error, accumulated in float64."""

from __future__ import annotations

import math

import numpy as np
import torch

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _as_array(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def psnr(a, b, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE); identical inputs give ``math.inf``."""
    a, b = _as_array(a), _as_array(b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def interpolation_error(a, b) -> float:
    """Root-mean-square difference on the 0-255 scale (inputs in [0, 1])."""
    a, b = _as_array(a), _as_array(b)
    return float(np.sqrt(np.mean((255.0 * (a - b)) ** 2)))


def _to_gray(x: np.ndarray) -> np.ndarray:
    """(…, c, h, w) or (h, w) -> list of (h, w) planes, channel-averaged."""
    if x.ndim == 2:
        return x[None]
    if x.ndim == 3:
        return x.mean(axis=0)[None]
    return x.mean(axis=-3).reshape(-1, *x.shape[-2:])


def gaussian_window(size: int, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def ssim_window_size(h: int, w: int) -> int:
    """11, shrunk to the largest odd size that fits small images."""
    size = min(SSIM_WINDOW, h, w)
    return size if size % 2 == 1 else size - 1


def _filter_valid(x: np.ndarray, win: np.ndarray) -> np.ndarray:
    patches = np.lib.stride_tricks.sliding_window_view(x, win.shape, axis=(-2, -1))
    return np.einsum("...ijkl,kl->...ij", patches, win)


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean SSIM over all valid window positions of the channel-mean images."""
    ga, gb = _to_gray(_as_array(a)), _to_gray(_as_array(b))
    win = gaussian_window(ssim_window_size(*ga.shape[-2:]))
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a = _filter_valid(ga, win)
    mu_b = _filter_valid(gb, win)
    var_a = _filter_valid(ga * ga, win) - mu_a**2
    var_b = _filter_valid(gb * gb, win) - mu_b**2
    cov = _filter_valid(ga * gb, win) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
