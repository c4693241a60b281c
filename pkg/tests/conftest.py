"""Shared fixtures: deterministic synthetic photographs.

The texture generator below stands in for photographic content in tests:
smooth low-frequency shading plus soft blobs (so neighboring pixels
correlate the way camera images do) with a few hard-edged shapes layered
on top (so corner detectors have something to find). Channels stay
correlated, mimicking natural color statistics.
"""

from __future__ import annotations

import numpy as np
import pytest

from neardup.imaging import Raster, raster_from_array


def synth_rgb(seed: int, w: int = 200, h: int = 160) -> Raster:
    """A deterministic natural-looking RGB test image."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    base = np.zeros((h, w), dtype=np.float64)
    for _ in range(6):
        kx, ky = rng.uniform(0.01, 0.09, size=2) * 2 * np.pi
        phase = rng.uniform(0, 2 * np.pi)
        base += rng.uniform(10, 30) * np.sin(kx * xx + ky * yy + phase)
    for _ in range(8):
        cx, cy = rng.uniform(0, w), rng.uniform(0, h)
        sigma = rng.uniform(min(w, h) / 12, min(w, h) / 4)
        amp = rng.uniform(-45, 45)
        base += amp * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma**2))
    lo, hi = base.min(), base.max()
    base = 40 + 175 * (base - lo) / max(hi - lo, 1e-9)
    for _ in range(7):
        x0 = rng.integers(0, max(1, w - 8))
        y0 = rng.integers(0, max(1, h - 8))
        bw = int(rng.integers(6, max(7, w // 4)))
        bh = int(rng.integers(6, max(7, h // 4)))
        base[y0 : y0 + bh, x0 : x0 + bw] += rng.uniform(-70, 70)
    base = np.clip(base, 0, 255)
    chans = []
    for _ in range(3):
        gain = rng.uniform(0.88, 1.12)
        off = rng.uniform(-12, 12)
        chans.append(np.clip(base * gain + off, 0, 255))
    return raster_from_array(np.stack(chans, axis=-1).astype(np.uint8))


@pytest.fixture
def textured() -> Raster:
    return synth_rgb(7)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)
