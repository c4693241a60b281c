"""The fixed 22-manipulation benchmark suite.

Each catalog entry is a deterministic transform of a source image:
noise, crops, flip, small rotations, downscales, channel swaps,
grayscale, a text overlay, red markups, and motion blur. Applying the
whole catalog to a source yields the benchmark queries whose ground
truth is the source itself; transforms whose preconditions fail on a
given source (tiny images, mostly) are reported as skips rather than
aborting the batch.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidDimension, InvalidRegion, TooSmall
from .imaging import (
    Raster,
    convolve,
    crop,
    flip_horizontal,
    motion_kernel,
    raster_from_array,
    resize_bilinear,
    rotate,
    to_grayscale,
)

OVERLAY_TEXT = "SAMPLE TEXT"
MARKUP_RED = (255, 0, 0)
STROKE_PX = 4

# 5x7 pixel glyphs, one string per row, '#' = on. Enough of the alphabet
# for overlay strings; unknown characters render as blanks.
_FONT_5X7 = {
    "A": ("01110", "10001", "10001", "11111", "10001", "10001", "10001"),
    "B": ("11110", "10001", "10001", "11110", "10001", "10001", "11110"),
    "C": ("01110", "10001", "10000", "10000", "10000", "10001", "01110"),
    "D": ("11100", "10010", "10001", "10001", "10001", "10010", "11100"),
    "E": ("11111", "10000", "10000", "11110", "10000", "10000", "11111"),
    "F": ("11111", "10000", "10000", "11110", "10000", "10000", "10000"),
    "G": ("01110", "10001", "10000", "10111", "10001", "10001", "01111"),
    "H": ("10001", "10001", "10001", "11111", "10001", "10001", "10001"),
    "I": ("01110", "00100", "00100", "00100", "00100", "00100", "01110"),
    "J": ("00111", "00010", "00010", "00010", "00010", "10010", "01100"),
    "K": ("10001", "10010", "10100", "11000", "10100", "10010", "10001"),
    "L": ("10000", "10000", "10000", "10000", "10000", "10000", "11111"),
    "M": ("10001", "11011", "10101", "10101", "10001", "10001", "10001"),
    "N": ("10001", "10001", "11001", "10101", "10011", "10001", "10001"),
    "O": ("01110", "10001", "10001", "10001", "10001", "10001", "01110"),
    "P": ("11110", "10001", "10001", "11110", "10000", "10000", "10000"),
    "Q": ("01110", "10001", "10001", "10001", "10101", "10010", "01101"),
    "R": ("11110", "10001", "10001", "11110", "10100", "10010", "10001"),
    "S": ("01111", "10000", "10000", "01110", "00001", "00001", "11110"),
    "T": ("11111", "00100", "00100", "00100", "00100", "00100", "00100"),
    "U": ("10001", "10001", "10001", "10001", "10001", "10001", "01110"),
    "V": ("10001", "10001", "10001", "10001", "10001", "01010", "00100"),
    "W": ("10001", "10001", "10001", "10101", "10101", "10101", "01010"),
    "X": ("10001", "10001", "01010", "00100", "01010", "10001", "10001"),
    "Y": ("10001", "10001", "01010", "00100", "00100", "00100", "00100"),
    "Z": ("11111", "00001", "00010", "00100", "01000", "10000", "11111"),
    " ": ("00000",) * 7,
}


@dataclass
class ManipulationSpec:
    id: str
    params: dict = field(default_factory=dict)
    rng_seed: int = 0


@dataclass
class ManipulatedImage:
    source_id: str
    manip: ManipulationSpec
    raster: Raster


@dataclass(frozen=True)
class SkipRecord:
    manip_id: str
    reason: str


def _stable_seed(manip_id: str, base_seed: int) -> int:
    # crc32 keyed by id and base seed: stable across runs and platforms,
    # unlike the salted builtin hash
    return zlib.crc32(f"{manip_id}:{base_seed}".encode()) & 0xFFFFFFFF


def catalog(seed: int = 0) -> list[ManipulationSpec]:
    """The closed list of exactly 22 manipulation specs."""
    specs: list[ManipulationSpec] = []
    for sd in (2, 4, 8):
        mid = f"noise_sd{sd}"
        specs.append(ManipulationSpec(mid, {"sd": sd}, _stable_seed(mid, seed)))
    specs.append(ManipulationSpec("crop_br_quarter", {"anchor": (2, 2), "to_edge": True}))
    specs.append(ManipulationSpec("crop_br_two_thirds", {"anchor": (3, 3), "to_edge": True}))
    specs.append(ManipulationSpec("crop_tl_two_thirds", {"anchor": (3, 3), "to_edge": False}))
    specs.append(ManipulationSpec("flip_h"))
    for degrees in (5, 10):
        specs.append(ManipulationSpec(f"rot_cw{degrees}", {"degrees": degrees}))
        specs.append(ManipulationSpec(f"rot_ccw{degrees}", {"degrees": -degrees}))
    for pct in (20, 40, 80):
        specs.append(ManipulationSpec(f"resize_{pct}", {"percent": pct}))
    specs.append(ManipulationSpec("gbr"))
    specs.append(ManipulationSpec("gray"))
    specs.append(ManipulationSpec("text", {"text": OVERLAY_TEXT}))
    specs.append(ManipulationSpec("markup_rect"))
    specs.append(ManipulationSpec("markup_ellipse"))
    for length, angle in ((10, 15), (15, 20), (20, 25)):
        specs.append(
            ManipulationSpec(f"motion_{length}_{angle}", {"length": length, "angle": angle})
        )
    assert len(specs) == 22
    return specs


def _ensure_rgb(r: Raster) -> Raster:
    if r.channels == 3:
        return r
    return raster_from_array(np.repeat(r.pixels, 3, axis=2))


def _apply_noise(r: Raster, spec: ManipulationSpec) -> Raster:
    rng = np.random.default_rng(spec.rng_seed)
    noise = rng.normal(0.0, float(spec.params["sd"]), size=r.pixels.shape)
    out = np.clip(np.rint(r.pixels.astype(np.float64) + noise), 0, 255)
    return raster_from_array(out.astype(np.uint8))


def _apply_crop(r: Raster, spec: ManipulationSpec) -> Raster:
    if r.width < 3 or r.height < 3:
        raise TooSmall(f"{spec.id} needs at least 3x3, got {r.width}x{r.height}")
    denom_x, denom_y = spec.params["anchor"]
    if spec.params["to_edge"]:
        x0, y0 = r.width // denom_x, r.height // denom_y
        x1, y1 = r.width, r.height
    else:
        x0, y0 = 0, 0
        x1, y1 = (2 * r.width) // denom_x, (2 * r.height) // denom_y
    return crop(r, x0, y0, x1, y1)


def _apply_resize(r: Raster, spec: ManipulationSpec) -> Raster:
    pct = spec.params["percent"]
    return resize_bilinear(r, (r.width * pct) // 100, (r.height * pct) // 100)


def _apply_gbr(r: Raster, _: ManipulationSpec) -> Raster:
    return raster_from_array(r.pixels[:, :, (1, 2, 0)].copy())


def _apply_gray(r: Raster, _: ManipulationSpec) -> Raster:
    return _ensure_rgb(to_grayscale(r))


def _apply_text(r: Raster, spec: ManipulationSpec) -> Raster:
    text = spec.params.get("text", OVERLAY_TEXT)
    h, w = r.height, r.width
    glyph_h = max(12, h // 10)
    s = max(1, round(glyph_h / 7))
    text_w, text_h = (6 * len(text) - 1) * s, 7 * s
    band_h = max(1, round(0.15 * h))
    x0 = (w - text_w) // 2
    y0 = (h - band_h) + (band_h - text_h) // 2
    mask = np.zeros((h, w), dtype=bool)
    for ci, ch in enumerate(text):
        rows = _FONT_5X7.get(ch.upper())
        if rows is None:
            continue
        gx = x0 + ci * 6 * s
        for gy, row in enumerate(rows):
            for gxx, bit in enumerate(row):
                if bit != "1":
                    continue
                ya, xa = y0 + gy * s, gx + gxx * s
                yb, xb = ya + s, xa + s
                ya, xa = max(ya, 0), max(xa, 0)
                yb, xb = min(yb, h), min(xb, w)
                if ya < yb and xa < xb:
                    mask[ya:yb, xa:xb] = True
    outline = np.zeros_like(mask)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            shifted = np.zeros_like(mask)
            ys = slice(max(dy, 0), h + min(dy, 0))
            yd = slice(max(-dy, 0), h + min(-dy, 0))
            xs = slice(max(dx, 0), w + min(dx, 0))
            xd = slice(max(-dx, 0), w + min(-dx, 0))
            shifted[yd, xd] = mask[ys, xs]
            outline |= shifted
    outline &= ~mask
    out = r.pixels.copy()
    out[outline] = 0
    out[mask] = 255
    return raster_from_array(out)


def _apply_markup_rect(r: Raster, _: ManipulationSpec) -> Raster:
    h, w = r.height, r.width
    ix, iy = round(0.1 * w), round(0.1 * h)
    x0, y0 = ix, iy
    x1, y1 = w - 1 - ix, h - 1 - iy
    yy, xx = np.mgrid[0:h, 0:w]
    outer = (xx >= x0) & (xx <= x1) & (yy >= y0) & (yy <= y1)
    inner = (
        (xx >= x0 + STROKE_PX)
        & (xx <= x1 - STROKE_PX)
        & (yy >= y0 + STROKE_PX)
        & (yy <= y1 - STROKE_PX)
    )
    out = r.pixels.copy()
    out[outer & ~inner] = MARKUP_RED
    return raster_from_array(out)


def _apply_markup_ellipse(r: Raster, _: ManipulationSpec) -> Raster:
    h, w = r.height, r.width
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    a, b = w / 4.0, h / 4.0  # ellipse inscribed in the central 50% box
    yy, xx = np.mgrid[0:h, 0:w]
    outer = ((xx - cx) / a) ** 2 + ((yy - cy) / b) ** 2 <= 1.0
    ai, bi = a - STROKE_PX, b - STROKE_PX
    if ai > 0 and bi > 0:
        inner = ((xx - cx) / ai) ** 2 + ((yy - cy) / bi) ** 2 <= 1.0
    else:
        inner = np.zeros_like(outer)
    out = r.pixels.copy()
    out[outer & ~inner] = MARKUP_RED
    return raster_from_array(out)


def _apply_motion(r: Raster, spec: ManipulationSpec) -> Raster:
    kernel = motion_kernel(spec.params["length"], float(spec.params["angle"]))
    return convolve(r, kernel)


def apply(r: Raster, spec: ManipulationSpec, source_id: str = "") -> ManipulatedImage:
    """Apply one catalog entry; bit-reproducible for identical inputs."""
    rgb = _ensure_rgb(r)
    sid = spec.id
    if sid.startswith("noise_"):
        out = _apply_noise(rgb, spec)
    elif sid.startswith("crop_"):
        out = _apply_crop(rgb, spec)
    elif sid == "flip_h":
        out = flip_horizontal(rgb)
    elif sid.startswith("rot_"):
        out = rotate(rgb, float(spec.params["degrees"]), fill=(0, 0, 0))
    elif sid.startswith("resize_"):
        out = _apply_resize(rgb, spec)
    elif sid == "gbr":
        out = _apply_gbr(rgb, spec)
    elif sid == "gray":
        out = _apply_gray(rgb, spec)
    elif sid == "text":
        out = _apply_text(rgb, spec)
    elif sid == "markup_rect":
        out = _apply_markup_rect(rgb, spec)
    elif sid == "markup_ellipse":
        out = _apply_markup_ellipse(rgb, spec)
    elif sid.startswith("motion_"):
        out = _apply_motion(rgb, spec)
    else:
        raise ValueError(f"unknown manipulation id {spec.id!r}")
    return ManipulatedImage(source_id=source_id, manip=spec, raster=out)


def generate_all(
    r: Raster, source_id: str, seed: int = 0
) -> tuple[list[ManipulatedImage], list[SkipRecord]]:
    """Apply the full catalog; per-item failures become skip records."""
    outputs: list[ManipulatedImage] = []
    skips: list[SkipRecord] = []
    for spec in catalog(seed):
        try:
            outputs.append(apply(r, spec, source_id))
        except (TooSmall, InvalidDimension, InvalidRegion) as exc:
            skips.append(SkipRecord(spec.id, f"{type(exc).__name__}: {exc}"))
    return outputs, skips
