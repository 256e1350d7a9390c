"""PSNR and SSIM on the BT.601 Y channel (no border crop)."""
import numpy as np

from .data import rgb_to_y

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
C1 = (0.01 * 255) ** 2
C2 = (0.03 * 255) ** 2


def _y(img):
    a = np.asarray(img)
    return rgb_to_y(a) if a.ndim == 3 else a.astype(np.float64)


def _pair(a, b):
    ya, yb = _y(a), _y(b)
    if ya.shape != yb.shape:
        raise ValueError(f"metric inputs differ in extent: {ya.shape} vs {yb.shape}")
    return ya, yb


def psnr(a, b):
    """10 log10(255^2 / MSE) on Y, reported at most 100 dB (identical images)."""
    ya, yb = _pair(a, b)
    mse = np.mean((ya - yb) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10 * np.log10(255.0 ** 2 / mse)))


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-x ** 2 / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img, g):
    k = len(g)
    win = np.lib.stride_tricks.sliding_window_view(img, k, axis=0)
    tmp = win @ g
    win = np.lib.stride_tricks.sliding_window_view(tmp, k, axis=1)
    return win @ g


def ssim(a, b):
    """Mean SSIM over valid 11x11 Gaussian (sigma 1.5) window positions on Y."""
    ya, yb = _pair(a, b)
    if min(ya.shape) < SSIM_WINDOW:
        raise ValueError(f"ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    g = gaussian_window()
    mu_a = _filter_valid(ya, g)
    mu_b = _filter_valid(yb, g)
    var_a = _filter_valid(ya * ya, g) - mu_a ** 2
    var_b = _filter_valid(yb * yb, g) - mu_b ** 2
    cov = _filter_valid(ya * yb, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + C1) * (2 * cov + C2)
    den = (mu_a ** 2 + mu_b ** 2 + C1) * (var_a + var_b + C2)
    return float(np.mean(num / den))
