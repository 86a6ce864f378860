"""PSNR, SSIM, and mean/std aggregation.

Both metrics compute in float64 regardless of input dtype so tolerance
checks do not inherit float32 rounding. SSIM uses the 11x11 Gaussian window
(sigma 1.5) over valid (fully interior) positions only; with unit dynamic
range the stabilizers are C1 = 0.01 and C2 = 0.03, which the constant-image
closed form (0.25 vs 0.75 -> 0.385/0.635) pins down.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor

__all__ = ["MetricStats", "psnr", "ssim", "aggregate"]

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01
SSIM_C2 = 0.03


@dataclass(frozen=True)
class MetricStats:
    """Mean plus sample (N-1) standard deviation; n=1 reports std 0."""

    mean: float
    std: float
    n: int
    n_excluded: int = 0


def _as_array(x) -> np.ndarray:
    if isinstance(x, Tensor):
        x = x.data
    return np.asarray(x, dtype=np.float64)


def psnr(reference, test, max_value: float = 1.0) -> float:
    """10*log10(max_value^2 / MSE); identical images yield +inf."""
    ref = _as_array(reference)
    tst = _as_array(test)
    if ref.shape != tst.shape:
        raise ShapeError(f"psnr needs matching shapes, got {ref.shape} vs {tst.shape}")
    mse = float(np.mean(np.square(ref - tst)))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_value * max_value / mse)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma * sigma))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


_SSIM_KERNEL = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)


def _as_image2d(x) -> np.ndarray:
    arr = _as_array(x)
    if arr.ndim < 2:
        raise ShapeError(f"ssim expects a 2D image, got shape {arr.shape}")
    if arr.ndim > 2:
        if np.prod(arr.shape[:-2]) != 1:
            raise ShapeError(f"ssim expects a single-channel image, got shape {arr.shape}")
        arr = arr.reshape(arr.shape[-2], arr.shape[-1])
    return arr


def _windowed_mean(img: np.ndarray) -> np.ndarray:
    view = sliding_window_view(img, (SSIM_WINDOW, SSIM_WINDOW))
    return np.tensordot(view, _SSIM_KERNEL, axes=([2, 3], [0, 1]))


def ssim(reference, test) -> float:
    """Mean local structural similarity over valid window positions."""
    x = _as_image2d(reference)
    y = _as_image2d(test)
    if x.shape != y.shape:
        raise ShapeError(f"ssim needs matching shapes, got {x.shape} vs {y.shape}")
    if x.shape[0] < SSIM_WINDOW or x.shape[1] < SSIM_WINDOW:
        raise ShapeError(
            f"image {x.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} ssim window")

    mu_x = _windowed_mean(x)
    mu_y = _windowed_mean(y)
    var_x = _windowed_mean(x * x) - mu_x * mu_x
    var_y = _windowed_mean(y * y) - mu_y * mu_y
    cov = _windowed_mean(x * y) - mu_x * mu_y

    num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return float(np.mean(num / den))


def aggregate(values: list[float], allow_all_infinite: bool = False) -> MetricStats:
    """Mean and sample std of the finite entries; infinities are counted out.

    Raises on an empty list or when nothing finite remains, unless
    ``allow_all_infinite`` is set and every entry is +inf (a lossless
    reconstruction has no meaningful PSNR spread, so report inf with n=0).
    """
    if len(values) == 0:
        raise ValueError("aggregate needs at least one value")
    finite = [float(v) for v in values if math.isfinite(v)]
    excluded = len(values) - len(finite)
    if not finite:
        if allow_all_infinite and all(v == math.inf for v in values):
            return MetricStats(mean=math.inf, std=0.0, n=0, n_excluded=excluded)
        raise ValueError(f"all {len(values)} values are non-finite")
    arr = np.asarray(finite, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return MetricStats(mean=float(arr.mean()), std=std, n=arr.size, n_excluded=excluded)
