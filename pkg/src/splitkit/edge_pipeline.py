"""Edge-importance extraction: grayscale, blur, Sobel, NMS thinning,
median normalization.

The pipeline distills a Canny-style detector down to the stages that
matter for placing primitives on true structure: after Sobel gradients,
non-maximum suppression keeps only ridge pixels along the gradient
direction, and dividing by twice the median of the surviving magnitudes
bounds the scores without letting a few global peaks crush everything
else. There is no hysteresis stage.

Images are row-major float arrays in [0, 1]; importance maps share the
image shape with suppressed pixels at exactly 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

GRAY_WEIGHTS = (0.299, 0.587, 0.114)  # Rec.601 luma

SOBEL_X = np.array([[-1.0, 0.0, 1.0],
                    [-2.0, 0.0, 2.0],
                    [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T


@dataclass
class GradientField:
    """Per-pixel gradient magnitude (>= 0) and orientation in [0, pi)."""

    magnitude: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        if self.magnitude.shape != self.orientation.shape:
            raise ValueError("magnitude and orientation shapes differ")


def to_grayscale(image) -> np.ndarray:
    """Rec.601 luma of an (H, W, 3) image in [0, 1], clamped to [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3 or image.shape[0] < 1 or image.shape[1] < 1:
        raise ValueError("expected a non-empty (H, W, 3) image")
    r, g, b = GRAY_WEIGHTS
    gray = r * image[:, :, 0] + g * image[:, :, 1] + b * image[:, :, 2]
    return np.clip(gray, 0.0, 1.0)


def blur_kernel_5x5(sigma: float) -> np.ndarray:
    """Normalized 5x5 Gaussian kernel, k(i,j) ~ exp(-(i^2+j^2)/(2 sigma^2))."""
    if sigma <= 0.0:
        raise ValueError("sigma must be positive")
    offsets = np.arange(-2, 3, dtype=np.float64)
    k1 = np.exp(-(offsets ** 2) / (2.0 * sigma * sigma))
    kernel = np.outer(k1, k1)
    return kernel / kernel.sum()


def gaussian_blur_5x5(gray, sigma: float = 1.0) -> np.ndarray:
    """5x5 Gaussian blur with edge-replicated borders; output stays in [0, 1]."""
    gray = np.asarray(gray, dtype=np.float64)
    kernel = blur_kernel_5x5(sigma)
    blurred = ndimage.convolve(gray, kernel, mode="nearest")
    return np.clip(blurred, 0.0, 1.0)


def sobel_gradients(gray) -> GradientField:
    """Sobel magnitude and orientation with edge-replicated borders.

    Orientation is atan2(Gy, Gx) folded into [0, pi); the image must be at
    least 3x3 so the kernels have support.
    """
    gray = np.asarray(gray, dtype=np.float64)
    if gray.ndim != 2 or gray.shape[0] < 3 or gray.shape[1] < 3:
        raise ValueError("Sobel gradients need a grayscale image of at least 3x3")
    gx = ndimage.correlate(gray, SOBEL_X, mode="nearest")
    gy = ndimage.correlate(gray, SOBEL_Y, mode="nearest")
    magnitude = np.hypot(gx, gy)
    orientation = np.mod(np.arctan2(gy, gx), np.pi)
    return GradientField(magnitude, orientation)


def nms_thin(field: GradientField) -> np.ndarray:
    """Thin a gradient field by suppressing non-maxima along the gradient.

    Orientation is quantized to 4 directions (0, 45, 90, 135 degrees). A
    pixel survives only if its magnitude strictly exceeds the neighbor that
    precedes it in scan order along that direction and is >= the one that
    follows, so an exact plateau keeps its first pixel only. Out-of-bounds
    neighbors count as 0.
    """
    mag = field.magnitude
    # neighbor lookup through a zero ring handles borders uniformly
    padded = np.pad(mag, 1, mode="constant")

    def shifted(di, dj):
        return padded[1 + di:1 + di + mag.shape[0], 1 + dj:1 + dj + mag.shape[1]]

    bins = np.floor((field.orientation + np.pi / 8) / (np.pi / 4)).astype(int) % 4
    # (prev, next) offsets in scan order per quantized direction
    neighbor_offsets = {
        0: ((0, -1), (0, 1)),    # horizontal gradient
        1: ((-1, -1), (1, 1)),   # down-right diagonal
        2: ((-1, 0), (1, 0)),    # vertical
        3: ((-1, 1), (1, -1)),   # down-left diagonal
    }
    keep = np.zeros(mag.shape, dtype=bool)
    for b, ((pi_, pj), (ni, nj)) in neighbor_offsets.items():
        sel = bins == b
        keep |= sel & (mag > shifted(pi_, pj)) & (mag >= shifted(ni, nj))
    return np.where(keep, mag, 0.0)


def median_normalize(thinned) -> np.ndarray:
    """Scores in [0, 1]: value / (2 * median of positive values), clamped.

    Zeros stay exactly zero; an all-zero input maps to itself.
    """
    thinned = np.asarray(thinned, dtype=np.float64)
    positive = thinned[thinned > 0.0]
    median = np.median(positive) if positive.size else 1.0
    return np.minimum(thinned / (2.0 * median), 1.0)


def importance_pipeline(image, sigma: float = 1.0) -> np.ndarray:
    """Full importance map: grayscale, blur, Sobel, NMS, median-normalize.

    Accepts an (H, W, 3) RGB image or an already-gray (H, W) one.
    """
    image = np.asarray(image, dtype=np.float64)
    gray = image if image.ndim == 2 else to_grayscale(image)
    return median_normalize(nms_thin(sobel_gradients(gaussian_blur_5x5(gray, sigma))))


def sample_scores(importance, positions) -> np.ndarray:
    """Bilinearly sample an importance map at (x, y) pixel positions.

    Positions outside [0, W-1] x [0, H-1] score 0.
    """
    importance = np.asarray(importance, dtype=np.float64)
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    h, w = importance.shape
    x, y = positions[:, 0], positions[:, 1]
    inside = (x >= 0.0) & (x <= w - 1.0) & (y >= 0.0) & (y <= h - 1.0)

    xc = np.clip(x, 0.0, w - 1.0)
    yc = np.clip(y, 0.0, h - 1.0)
    x0 = np.floor(xc).astype(int)
    y0 = np.floor(yc).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xc - x0
    fy = yc - y0

    v00 = importance[y0, x0]
    v01 = importance[y0, x1]
    v10 = importance[y1, x0]
    v11 = importance[y1, x1]
    value = ((1 - fy) * ((1 - fx) * v00 + fx * v01)
             + fy * ((1 - fx) * v10 + fx * v11))
    return np.where(inside, value, 0.0)
