"""64-bit perceptual hash from low-frequency DCT signs.

Construction: grayscale, bilinear resize to 32x32, orthonormal 2-D
DCT-II, keep the top-left 8x8 coefficient block, take the median of the
63 non-DC coefficients, and emit one bit per coefficient in row-major
order (1 where the coefficient exceeds the median). The DC coefficient
is excluded from the median but still contributes bit 0. Hashes are
compared with Hamming distance; near-duplicates land within a few bits
while unrelated content averages ~32 of 64.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .imaging import Raster, resize_bilinear, to_grayscale

HASH_SIDE = 32
BLOCK = 8


@lru_cache(maxsize=4)
def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix: row k is the k-th cosine basis vector."""
    k = np.arange(n, dtype=np.float64)[:, None]
    m = np.arange(n, dtype=np.float64)[None, :]
    c = np.cos(np.pi * (2 * m + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    c[0] /= np.sqrt(2.0)
    c.flags.writeable = False
    return c


def phash(r: Raster) -> int:
    """Compute the 64-bit perceptual hash as an unsigned integer.

    Bit i (i = row*8 + col over the coefficient block) is stored at
    position 63-i, so the hex form reads the block row by row.
    """
    small = resize_bilinear(to_grayscale(r), HASH_SIDE, HASH_SIDE)
    a = small.pixels[:, :, 0].astype(np.float64)
    c = dct_matrix(HASH_SIDE)
    coeffs = c @ a @ c.T
    block = coeffs[:BLOCK, :BLOCK]
    flat = block.ravel()
    median = np.median(flat[1:])  # 63 values, DC excluded
    bits = flat > median
    value = 0
    for bit in bits:
        value = (value << 1) | int(bit)
    return value


def hamming64(a: int, b: int) -> int:
    """Number of differing bits between two 64-bit hashes."""
    return ((a ^ b) & 0xFFFFFFFFFFFFFFFF).bit_count()


def to_hex(h: int) -> str:
    """16 lowercase hex characters, most significant bit first."""
    return f"{h & 0xFFFFFFFFFFFFFFFF:016x}"


def from_hex(s: str) -> int:
    if len(s) != 16:
        raise ValueError(f"hash hex must be 16 characters, got {len(s)}")
    return int(s, 16)
