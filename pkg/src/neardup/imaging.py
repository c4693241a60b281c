"""Deterministic raster primitives.

All pixel math in this package flows through the functions here so that
every derived image is reproducible bit for bit: fixed rounding (round
half to even via ``np.rint`` on values that are never exactly .5 in
practice), fixed border policies, and no hidden library defaults.
Geometry follows screen conventions: x grows right, y grows down, and a
positive rotation angle turns the image clockwise as displayed.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, InvalidDimension, InvalidRegion

GRAY_WEIGHTS = (0.299, 0.587, 0.114)  # BT.601 luma


@dataclass(frozen=True)
class Raster:
    """An 8-bit image held as a read-only (height, width, channels) array.

    ``channels`` is 1 (grayscale) or 3 (RGB). The pixel buffer is marked
    non-writeable on construction; operations return new rasters.
    """

    width: int
    height: int
    channels: int
    pixels: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise InvalidDimension(f"raster dims {self.width}x{self.height}")
        if self.channels not in (1, 3):
            raise InvalidDimension(f"channels must be 1 or 3, got {self.channels}")
        px = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if px.shape != (self.height, self.width, self.channels):
            raise InvalidDimension(
                f"pixel buffer shape {px.shape} does not match "
                f"{(self.height, self.width, self.channels)}"
            )
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)


def raster_from_array(arr: np.ndarray) -> Raster:
    """Wrap an (h, w), (h, w, 1) or (h, w, 3) uint8 array as a Raster."""
    a = np.asarray(arr)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or a.shape[2] not in (1, 3):
        raise InvalidDimension(f"cannot wrap array of shape {a.shape}")
    h, w, c = a.shape
    return Raster(width=w, height=h, channels=c, pixels=a.astype(np.uint8, copy=True))


def decode(data: bytes) -> Raster:
    """Decode PNG or JPEG bytes to an RGB raster.

    Grayscale and palette sources are expanded to three equal channels;
    alpha is composited over black. Malformed bytes or any other format
    raise DecodeError.
    """
    try:
        with Image.open(io.BytesIO(data)) as im:
            if im.format not in ("PNG", "JPEG"):
                raise DecodeError(f"unsupported image format: {im.format}")
            rgb = im.convert("RGB")
            arr = np.asarray(rgb, dtype=np.uint8)
    except DecodeError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"cannot decode image: {exc}") from exc
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DecodeError(f"decoded to unusable shape {arr.shape}")
    return raster_from_array(arr)


def encode_png(r: Raster) -> bytes:
    """Encode a raster as PNG bytes (lossless, deterministic settings)."""
    arr = r.pixels[:, :, 0] if r.channels == 1 else r.pixels
    im = Image.fromarray(arr, mode="L" if r.channels == 1 else "RGB")
    buf = io.BytesIO()
    im.save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def to_grayscale(r: Raster) -> Raster:
    """BT.601 luma: round(0.299 R + 0.587 G + 0.114 B), clamped to [0, 255].

    Grayscale input is returned unchanged.
    """
    if r.channels == 1:
        return r
    wr, wg, wb = GRAY_WEIGHTS
    px = r.pixels.astype(np.float64)
    gray = wr * px[:, :, 0] + wg * px[:, :, 1] + wb * px[:, :, 2]
    gray = np.clip(np.rint(gray), 0, 255).astype(np.uint8)
    return raster_from_array(gray)


def _sample_axis(src_len: int, dst_len: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Half-pixel-center source coordinates for one axis, clamped to bounds."""
    scale = src_len / dst_len
    coords = (np.arange(dst_len, dtype=np.float64) + 0.5) * scale - 0.5
    coords = np.clip(coords, 0.0, src_len - 1.0)
    lo = np.floor(coords).astype(np.int64)
    hi = np.minimum(lo + 1, src_len - 1)
    frac = coords - lo
    return lo, hi, frac


def resize_bilinear(r: Raster, new_w: int, new_h: int) -> Raster:
    """Resize with bilinear interpolation over half-pixel-aligned centers.

    Same-size resize returns a pixel-identical copy. Zero or negative
    target dimensions raise InvalidDimension.
    """
    if new_w < 1 or new_h < 1:
        raise InvalidDimension(f"target size {new_w}x{new_h}")
    x0, x1, fx = _sample_axis(r.width, new_w)
    y0, y1, fy = _sample_axis(r.height, new_h)
    px = r.pixels.astype(np.float64)
    top = px[y0][:, x0] * (1.0 - fx)[None, :, None] + px[y0][:, x1] * fx[None, :, None]
    bot = px[y1][:, x0] * (1.0 - fx)[None, :, None] + px[y1][:, x1] * fx[None, :, None]
    out = top * (1.0 - fy)[:, None, None] + bot * fy[:, None, None]
    return raster_from_array(np.clip(np.rint(out), 0, 255).astype(np.uint8))


def rotate(r: Raster, degrees: float, fill: int | tuple[int, ...] = 0) -> Raster:
    """Rotate about the image center, positive angle = clockwise on screen.

    The canvas keeps its size; regions that leave the frame are lost and
    uncovered regions take ``fill``. Sampling is bilinear with inverse
    mapping; destination pixels whose source center falls outside the
    image take ``fill`` outright.
    """
    w, h, c = r.width, r.height, r.channels
    theta = np.deg2rad(degrees)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    xs = np.arange(w, dtype=np.float64) - cx
    ys = np.arange(h, dtype=np.float64) - cy
    dx, dy = np.meshgrid(xs, ys)
    # In a y-down frame the visually clockwise rotation is the positive
    # mathematical angle, so the inverse map uses R(-theta).
    sx = cos_t * dx + sin_t * dy + cx
    sy = -sin_t * dx + cos_t * dy + cy
    valid = (sx >= 0.0) & (sx <= w - 1.0) & (sy >= 0.0) & (sy <= h - 1.0)
    sxc = np.clip(sx, 0.0, w - 1.0)
    syc = np.clip(sy, 0.0, h - 1.0)
    x0 = np.floor(sxc).astype(np.int64)
    y0 = np.floor(syc).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (sxc - x0)[:, :, None]
    fy = (syc - y0)[:, :, None]
    px = r.pixels.astype(np.float64)
    top = px[y0, x0] * (1.0 - fx) + px[y0, x1] * fx
    bot = px[y1, x0] * (1.0 - fx) + px[y1, x1] * fx
    out = top * (1.0 - fy) + bot * fy
    fill_vec = np.broadcast_to(np.asarray(fill, dtype=np.float64).ravel(), (c,))
    out = np.where(valid[:, :, None], out, fill_vec)
    return raster_from_array(np.clip(np.rint(out), 0, 255).astype(np.uint8))


def crop(r: Raster, x0: int, y0: int, x1: int, y1: int) -> Raster:
    """Extract the half-open region [x0, x1) x [y0, y1)."""
    if not (0 <= x0 < x1 <= r.width and 0 <= y0 < y1 <= r.height):
        raise InvalidRegion(
            f"region ({x0},{y0},{x1},{y1}) invalid for {r.width}x{r.height}"
        )
    return raster_from_array(r.pixels[y0:y1, x0:x1].copy())


def flip_horizontal(r: Raster) -> Raster:
    """Mirror left-right."""
    return raster_from_array(r.pixels[:, ::-1].copy())


@dataclass(frozen=True)
class Kernel2D:
    """A square odd-sized convolution kernel whose weights sum to 1."""

    size: int
    weights: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if self.size < 1 or self.size % 2 == 0:
            raise InvalidDimension(f"kernel size must be odd and positive: {self.size}")
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        if w.shape != (self.size, self.size):
            raise InvalidDimension(f"kernel shape {w.shape} != {(self.size, self.size)}")
        if abs(float(w.sum()) - 1.0) > 1e-9:
            raise InvalidDimension(f"kernel weights sum to {w.sum()!r}, expected 1")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)


def convolve(r: Raster, kernel: Kernel2D) -> Raster:
    """2-D convolution with replicate padding at the borders.

    True convolution (the kernel is flipped); output values are rounded
    and clamped back to uint8. A constant image is preserved up to the
    +-1 rounding of the weight sum.
    """
    c = kernel.size // 2
    px = r.pixels.astype(np.float64)
    padded = np.pad(px, ((c, c), (c, c), (0, 0)), mode="edge")
    h, w = r.height, r.width
    out = np.zeros_like(px)
    ki, kj = np.nonzero(kernel.weights)
    for i, j in zip(ki.tolist(), kj.tolist()):
        # out(y,x) += k[i,j] * img(y - (i-c), x - (j-c)), shifted into the pad
        out += kernel.weights[i, j] * padded[2 * c - i : 2 * c - i + h, 2 * c - j : 2 * c - j + w]
    return raster_from_array(np.clip(np.rint(out), 0, 255).astype(np.uint8))


def motion_kernel(length: int, angle_degrees: float) -> Kernel2D:
    """Uniform line kernel for linear motion blur.

    ``length`` samples are placed symmetrically about the origin along the
    direction ``angle_degrees`` (counter-clockwise from the +x axis as
    displayed), rounded to the nearest cell (half away from zero), and
    duplicates merged. Weights are uniform over the distinct cells and the
    kernel is the smallest odd square containing them. length=1 gives the
    identity kernel.
    """
    if length < 1:
        raise InvalidDimension(f"motion length must be >= 1, got {length}")
    theta = np.deg2rad(angle_degrees)
    # +angle is counter-clockwise as displayed, so y (down) gets -sin.
    ux, uy = np.cos(theta), -np.sin(theta)
    t = np.arange(length, dtype=np.float64) - (length - 1) / 2.0
    px = np.copysign(np.floor(np.abs(t * ux) + 0.5), t * ux).astype(np.int64)
    py = np.copysign(np.floor(np.abs(t * uy) + 0.5), t * uy).astype(np.int64)
    cells = sorted(set(zip(px.tolist(), py.tolist())))
    radius = max(max(abs(x) for x, _ in cells), max(abs(y) for _, y in cells))
    size = 2 * radius + 1
    weights = np.zeros((size, size), dtype=np.float64)
    for x, y in cells:
        weights[radius + y, radius + x] = 1.0 / len(cells)
    return Kernel2D(size=size, weights=weights)
