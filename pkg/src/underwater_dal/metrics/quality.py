"""Full-reference image quality: PSNR and single-scale Gaussian-window SSIM."""

import numpy as np
from scipy.signal import convolve2d

from ..lib.errors import InvalidInputError

PSNR_CAP_DB = 100.0

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError(f"images differ in shape: {a.shape} vs {b.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray, max_val=1.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at 100 dB for identical images

    Args:
        a (np.ndarray): image
        b (np.ndarray): image of the same shape
        max_val (float, optional): dynamic range. Defaults to 1.0.

    Returns:
        float: 10 log10(max_val^2 / MSE)
    """
    a, b = _check_pair(a, b)
    if not max_val > 0:
        raise InvalidInputError(f"max_val must be positive, got {max_val}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(max_val**2 / mse))


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA) -> np.ndarray:
    r = (size - 1) / 2.0
    y, x = np.ogrid[-r : r + 1, -r : r + 1]
    h = np.exp(-(x * x + y * y) / (2.0 * sigma * sigma))
    return h / h.sum()


def to_luma(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image
    if image.ndim != 3 or image.shape[2] != 3:
        raise InvalidInputError(f"expected H x W or H x W x 3 image, got shape {image.shape}")
    return image @ LUMA_WEIGHTS


def ssim_map(a: np.ndarray, b: np.ndarray, dynamic_range=1.0) -> np.ndarray:
    """Local SSIM over every full 11 x 11 window of two grayscale images"""
    a, b = _check_pair(a, b)
    if a.ndim != 2:
        raise InvalidInputError(f"ssim_map expects grayscale images, got shape {a.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise InvalidInputError(f"image {a.shape} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    window = gaussian_window()
    c1 = (SSIM_K1 * dynamic_range) ** 2
    c2 = (SSIM_K2 * dynamic_range) ** 2

    def filt(x):
        return convolve2d(x, window, mode="valid")

    mu_a, mu_b = filt(a), filt(b)
    mu_a2, mu_b2, mu_ab = mu_a * mu_a, mu_b * mu_b, mu_a * mu_b
    var_a = filt(a * a) - mu_a2
    var_b = filt(b * b) - mu_b2
    cov = filt(a * b) - mu_ab
    return ((2 * mu_ab + c1) * (2 * cov + c2)) / ((mu_a2 + mu_b2 + c1) * (var_a + var_b + c2))


def ssim(a: np.ndarray, b: np.ndarray, per_channel=False, dynamic_range=1.0) -> float:
    """Structural similarity of two images

    RGB inputs are reduced to luma first unless ``per_channel`` is set, in which case the channel
    scores are averaged.

    Args:
        a (np.ndarray): H x W or H x W x 3 image in [0, dynamic_range]
        b (np.ndarray): image of the same shape
        per_channel (bool, optional): average over channels instead of using luma. Defaults to False.
        dynamic_range (float, optional): value range L. Defaults to 1.0.

    Returns:
        float: mean local SSIM in (-1, 1]
    """
    a, b = _check_pair(a, b)
    if per_channel and a.ndim == 3:
        return float(np.mean([np.mean(ssim_map(a[..., c], b[..., c], dynamic_range)) for c in range(a.shape[2])]))
    return float(np.mean(ssim_map(to_luma(a), to_luma(b), dynamic_range)))
