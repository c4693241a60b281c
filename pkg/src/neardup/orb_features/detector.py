"""Oriented multi-scale corner detection.

Segment-test corners (16-pixel ring, 9 contiguous) are found on a
1.2-factor 8-level pyramid, non-max suppressed and re-ranked by Harris
response, and each surviving keypoint gets an orientation from the
intensity centroid of its radius-15 patch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..imaging import Raster, raster_from_array, resize_bilinear, to_grayscale

FAST_THRESHOLD = 20
FAST_ARC = 9
SCALE_FACTOR = 1.2
N_LEVELS = 8
HARRIS_BLOCK = 7
HARRIS_K = 0.04
CENTROID_RADIUS = 15
MIN_IMAGE_SIDE = 32
# ring margin (3) + centroid radius: keypoints closer to an edge than
# this at their level are discarded outright
DETECT_MARGIN = CENTROID_RADIUS + 1

# ring of 16 offsets at radius 3, clockwise from 12 o'clock
_RING = (
    (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
    (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
)


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    response: float
    orientation: float
    scale_level: int


def _build_arc_table() -> np.ndarray:
    """For every 16-bit ring mask: does a circular run of 9 ones exist?

    Doubling the mask turns circular runs into linear ones; ANDing the
    doubled mask with itself shifted 1..8 leaves bit p set iff bits
    p..p+8 were all set.
    """
    m = np.arange(1 << 16, dtype=np.uint32)
    doubled = m | (m << np.uint32(16))
    runs = doubled.copy()
    for shift in range(1, FAST_ARC):
        runs &= doubled >> np.uint32(shift)
    return (runs & np.uint32(0xFFFF)) != 0


_ARC_TABLE = _build_arc_table()


def _fast_corners(img: np.ndarray) -> np.ndarray:
    """Boolean corner mask (3px ring border always False)."""
    h, w = img.shape
    mask = np.zeros((h, w), dtype=bool)
    if h < 7 or w < 7:
        return mask
    center = img[3:h - 3, 3:w - 3].astype(np.int16)
    hi = center + FAST_THRESHOLD
    lo = center - FAST_THRESHOLD
    bright = np.zeros(center.shape, dtype=np.uint32)
    dark = np.zeros(center.shape, dtype=np.uint32)
    for bit, (dx, dy) in enumerate(_RING):
        ring = img[3 + dy:h - 3 + dy, 3 + dx:w - 3 + dx].astype(np.int16)
        bright |= (ring > hi).astype(np.uint32) << np.uint32(bit)
        dark |= (ring < lo).astype(np.uint32) << np.uint32(bit)
    mask[3:h - 3, 3:w - 3] = _ARC_TABLE[bright] | _ARC_TABLE[dark]
    return mask


def _box_sum(a: np.ndarray, radius: int) -> np.ndarray:
    """Sum over a (2*radius+1)^2 window, zero-padded at the edges."""
    r = radius
    p = np.pad(a, ((r + 1, r), (r + 1, r))).cumsum(axis=0).cumsum(axis=1)
    k = 2 * r + 1
    return p[k:, k:] + p[:-k, :-k] - p[k:, :-k] - p[:-k, k:]


def _harris_response(img: np.ndarray) -> np.ndarray:
    """Corner response det(M) - k*trace(M)^2 over a 7x7 block."""
    f = img.astype(np.float64)
    gx = np.zeros_like(f)
    gy = np.zeros_like(f)
    gx[:, 1:-1] = f[:, 2:] - f[:, :-2]
    gy[1:-1, :] = f[2:, :] - f[:-2, :]
    radius = HARRIS_BLOCK // 2
    a = _box_sum(gx * gx, radius)
    b = _box_sum(gx * gy, radius)
    c = _box_sum(gy * gy, radius)
    return (a * c - b * b) - HARRIS_K * (a + c) ** 2


def _local_maxima(score: np.ndarray) -> np.ndarray:
    """score >= all 8 neighbours (edge-padded with -inf)."""
    h, w = score.shape
    p = np.full((h + 2, w + 2), -np.inf)
    p[1:-1, 1:-1] = score
    best = np.full_like(score, -np.inf)
    for dy in (0, 1, 2):
        for dx in (0, 1, 2):
            if dy == 1 and dx == 1:
                continue
            np.maximum(best, p[dy:dy + h, dx:dx + w], out=best)
    return score >= best


_DISC = [
    (dx, dy)
    for dy in range(-CENTROID_RADIUS, CENTROID_RADIUS + 1)
    for dx in range(-CENTROID_RADIUS, CENTROID_RADIUS + 1)
    if dx * dx + dy * dy <= CENTROID_RADIUS * CENTROID_RADIUS
]
_DISC_DX = np.array([d[0] for d in _DISC], dtype=np.int64)
_DISC_DY = np.array([d[1] for d in _DISC], dtype=np.int64)


def _orientations(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Intensity-centroid angle, radians in [0, 2pi), for each (y, x)."""
    patch = img[
        ys[:, None] + _DISC_DY[None, :], xs[:, None] + _DISC_DX[None, :]
    ].astype(np.float64)
    m10 = patch @ _DISC_DX.astype(np.float64)
    m01 = patch @ _DISC_DY.astype(np.float64)
    return np.mod(np.arctan2(m01, m10), 2.0 * math.pi)


def gray_pyramid(r: Raster) -> list[np.ndarray]:
    """8 grayscale octaves at scale 1.2^-level, smallest kept >= 1px."""
    base = to_grayscale(r).pixels[:, :, 0]
    levels = [base]
    for level in range(1, N_LEVELS):
        s = SCALE_FACTOR ** level
        w = max(1, round(base.shape[1] / s))
        h = max(1, round(base.shape[0] / s))
        levels.append(_resize_gray(base, w, h))
    return levels


def _resize_gray(gray: np.ndarray, w: int, h: int) -> np.ndarray:
    return resize_bilinear(raster_from_array(gray), w, h).pixels[:, :, 0]


def detect_on_pyramid(levels: list[np.ndarray], max_n: int) -> list[Keypoint]:
    found: list[tuple[float, int, int, int, float]] = []
    for level, img in enumerate(levels):
        h, w = img.shape
        if h < 2 * DETECT_MARGIN + 1 or w < 2 * DETECT_MARGIN + 1:
            continue
        corners = _fast_corners(img)
        corners[:DETECT_MARGIN, :] = False
        corners[-DETECT_MARGIN:, :] = False
        corners[:, :DETECT_MARGIN] = False
        corners[:, -DETECT_MARGIN:] = False
        if not corners.any():
            continue
        response = _harris_response(img)
        score = np.where(corners, response, -np.inf)
        keep = corners & _local_maxima(score)
        ys, xs = np.nonzero(keep)
        if ys.size == 0:
            continue
        angles = _orientations(img, ys, xs)
        resp = response[ys, xs]
        for i in range(ys.size):
            found.append((float(resp[i]), level, int(ys[i]), int(xs[i]), float(angles[i])))
    # strongest first; level/position break exact response ties deterministically
    found.sort(key=lambda t: (-t[0], t[1], t[2], t[3]))
    return [
        Keypoint(x=float(x), y=float(y), response=resp, orientation=angle, scale_level=level)
        for resp, level, y, x, angle in found[:max_n]
    ]


def detect_keypoints(r: Raster, max_n: int = 200) -> list[Keypoint]:
    """Up to max_n corners across the pyramid, strongest Harris first.

    Images smaller than 32x32 yield an empty list.
    """
    if max_n < 0:
        raise ValueError(f"max_n must be >= 0, got {max_n}")
    if r.width < MIN_IMAGE_SIDE or r.height < MIN_IMAGE_SIDE:
        return []
    return detect_on_pyramid(gray_pyramid(r), max_n)
