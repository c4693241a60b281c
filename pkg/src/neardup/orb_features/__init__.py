"""Local binary image features: detection, description, and 128-bit codes.

detect_keypoints finds up to 200 oriented corners on a scale pyramid,
describe turns them into 256-bit descriptors, and a fitted PcaModel
reduces those to 128-bit codes (or 128 reals) for indexing.
"""

from __future__ import annotations

import numpy as np

from ..imaging import Raster
from .descriptor import DESCRIPTOR_BYTES, describe, describe_on_pyramid
from .detector import (
    MIN_IMAGE_SIDE,
    N_LEVELS,
    SCALE_FACTOR,
    Keypoint,
    detect_keypoints,
    detect_on_pyramid,
    gray_pyramid,
)
from .pca import (
    PcaModel,
    encode,
    encode_many,
    fit_pca,
    load_pca,
    load_pca_file,
    project_real,
    save_pca,
    save_pca_file,
)

MAX_KEYPOINTS = 200

__all__ = [
    "DESCRIPTOR_BYTES",
    "Keypoint",
    "MAX_KEYPOINTS",
    "MIN_IMAGE_SIDE",
    "N_LEVELS",
    "PcaModel",
    "SCALE_FACTOR",
    "describe",
    "detect_keypoints",
    "encode",
    "encode_many",
    "extract_codes",
    "extract_descriptors",
    "extract_real",
    "fit_pca",
    "load_pca",
    "load_pca_file",
    "project_real",
    "save_pca",
    "save_pca_file",
]


def extract_descriptors(r: Raster, max_n: int = MAX_KEYPOINTS) -> np.ndarray:
    """Raw 256-bit descriptors for an image: (n, 32) uint8, n <= max_n.

    Builds the pyramid once and shares it between detection and
    description; equivalent to detect_keypoints followed by describe.
    """
    if r.width < MIN_IMAGE_SIDE or r.height < MIN_IMAGE_SIDE:
        return np.zeros((0, DESCRIPTOR_BYTES), dtype=np.uint8)
    levels = gray_pyramid(r)
    kps = detect_on_pyramid(levels, max_n)
    if not kps:
        return np.zeros((0, DESCRIPTOR_BYTES), dtype=np.uint8)
    descs, _ = describe_on_pyramid(levels, kps)
    return descs


def extract_codes(r: Raster, model: PcaModel, max_n: int = MAX_KEYPOINTS) -> np.ndarray:
    """128-bit codes for an image: (n, 16) uint8."""
    return encode_many(extract_descriptors(r, max_n), model)


def extract_real(r: Raster, model: PcaModel, max_n: int = MAX_KEYPOINTS) -> np.ndarray:
    """Real-valued projections for an image: (n, 128) float32."""
    return project_real(extract_descriptors(r, max_n), model)
