"""Steered 256-bit binary descriptors.

Each keypoint's fixed pair-test pattern is rotated by its orientation
(quantized to 30 steps of 12 degrees), sampled from a sigma-2 smoothed
copy of its pyramid level, and packed LSB-first into 32 bytes. Keypoints
whose rotated pattern would leave the image are dropped.
"""

from __future__ import annotations

import math

import numpy as np

from ..imaging import Kernel2D, Raster, convolve, raster_from_array
from .detector import Keypoint, gray_pyramid
from .pattern import pattern_array

N_ANGLE_BINS = 30
BLUR_SIZE = 7
BLUR_SIGMA = 2.0
DESCRIPTOR_BYTES = 32


def _gaussian_kernel(size: int, sigma: float) -> Kernel2D:
    half = size // 2
    d = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(d * d) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return Kernel2D(size=size, weights=k / k.sum())


_BLUR = _gaussian_kernel(BLUR_SIZE, BLUR_SIGMA)


def _rotated_patterns() -> np.ndarray:
    """(30, 256, 4) int: the pair tests pre-rotated per 12-degree bin."""
    base = pattern_array().astype(np.float64)
    out = np.empty((N_ANGLE_BINS, 256, 4), dtype=np.int64)
    for b in range(N_ANGLE_BINS):
        theta = 2.0 * math.pi * b / N_ANGLE_BINS
        c, s = math.cos(theta), math.sin(theta)
        for pair in range(2):
            x = base[:, 2 * pair]
            y = base[:, 2 * pair + 1]
            out[b, :, 2 * pair] = np.rint(x * c - y * s)
            out[b, :, 2 * pair + 1] = np.rint(x * s + y * c)
    return out


_ROTATED = _rotated_patterns()
# widest sampling offset over all bins: the in-bounds margin for describe
PATTERN_REACH = int(np.abs(_ROTATED).max())


def smooth_level(img: np.ndarray) -> np.ndarray:
    return convolve(raster_from_array(img), _BLUR).pixels[:, :, 0]


def orientation_bin(theta: float) -> int:
    return int(round(theta * N_ANGLE_BINS / (2.0 * math.pi))) % N_ANGLE_BINS


def describe_on_pyramid(
    levels: list[np.ndarray], kps: list[Keypoint]
) -> tuple[np.ndarray, list[int]]:
    smoothed: dict[int, np.ndarray] = {}
    rows = np.zeros((len(kps), DESCRIPTOR_BYTES), dtype=np.uint8)
    kept: list[int] = []
    for i, kp in enumerate(kps):
        img = smoothed.get(kp.scale_level)
        if img is None:
            img = smooth_level(levels[kp.scale_level])
            smoothed[kp.scale_level] = img
        h, w = img.shape
        xi, yi = round(kp.x), round(kp.y)
        if not (
            PATTERN_REACH <= xi < w - PATTERN_REACH
            and PATTERN_REACH <= yi < h - PATTERN_REACH
        ):
            continue
        tests = _ROTATED[orientation_bin(kp.orientation)]
        first = img[yi + tests[:, 1], xi + tests[:, 0]]
        second = img[yi + tests[:, 3], xi + tests[:, 2]]
        rows[len(kept)] = np.packbits(first < second, bitorder="little")
        kept.append(i)
    return rows[: len(kept)].copy(), kept


def describe(r: Raster, kps: list[Keypoint]) -> tuple[np.ndarray, list[int]]:
    """Descriptors as an (n, 32) uint8 array plus indices of kept keypoints.

    Keypoints must come from detection on the same raster; the pyramid is
    rebuilt here, which reproduces the detector's levels exactly.
    """
    if not kps:
        return np.zeros((0, DESCRIPTOR_BYTES), dtype=np.uint8), []
    return describe_on_pyramid(gray_pyramid(r), kps)
