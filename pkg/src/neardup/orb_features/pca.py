"""Projection of 256-bit descriptors to 128-bit codes.

A PCA basis is fitted on a descriptor sample (bits treated as 0/1
reals); encoding projects the centered bits onto the top 128 components
and keeps only the signs. The fit is fully deterministic: moments are
accumulated in exact integer arithmetic (so sample order cannot change
the result), eigenvector signs are canonicalized, and rank-deficient
samples are completed with a fixed orthonormal basis of the null space.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ..errors import CorruptModel, InsufficientSample

PCA_MAGIC = b"NDPC"
PCA_VERSION = 1
IN_DIM = 256
OUT_DIM = 128
MIN_SAMPLE = 256
DEFAULT_MAX_SAMPLE = 2_000_000
_ORTHO_TOL = 1e-6


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    projection: np.ndarray
    trained_on: int

    def __post_init__(self) -> None:
        mean = np.ascontiguousarray(self.mean, dtype=np.float64)
        proj = np.ascontiguousarray(self.projection, dtype=np.float64)
        if mean.shape != (IN_DIM,) or proj.shape != (OUT_DIM, IN_DIM):
            raise CorruptModel(
                f"model arrays have shapes {mean.shape} and {proj.shape}"
            )
        gram = proj @ proj.T
        if not np.allclose(gram, np.eye(OUT_DIM), atol=_ORTHO_TOL):
            raise CorruptModel("projection rows are not orthonormal")
        mean.flags.writeable = False
        proj.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "projection", proj)


def _unpack(descriptors: np.ndarray) -> np.ndarray:
    d = np.ascontiguousarray(descriptors, dtype=np.uint8)
    if d.ndim != 2 or d.shape[1] != IN_DIM // 8:
        raise ValueError(f"expected (n, {IN_DIM // 8}) packed descriptors, got {d.shape}")
    return np.unpackbits(d, axis=1, bitorder="little")


def _fix_signs(rows: np.ndarray) -> np.ndarray:
    idx = np.abs(rows).argmax(axis=1)
    flip = rows[np.arange(rows.shape[0]), idx] < 0
    rows[flip] *= -1.0
    return rows


def _complete_basis(rows: list[np.ndarray]) -> list[np.ndarray]:
    """Extend to OUT_DIM orthonormal rows using coordinate axes, in order."""
    for j in range(IN_DIM):
        if len(rows) == OUT_DIM:
            break
        v = np.zeros(IN_DIM)
        v[j] = 1.0
        for r in rows:
            v -= (r @ v) * r
        norm = float(np.linalg.norm(v))
        if norm > 1e-6:
            rows.append(v / norm)
    return rows


def fit_pca(
    descriptors: np.ndarray,
    seed: int = 0,
    max_sample: int = DEFAULT_MAX_SAMPLE,
) -> PcaModel:
    """Fit the 128-component basis on a packed descriptor sample.

    Samples larger than max_sample are thinned by seeded sampling without
    replacement. Fewer than 256 descriptors raise InsufficientSample.
    """
    bits = _unpack(descriptors)
    n = bits.shape[0]
    if n < MIN_SAMPLE:
        raise InsufficientSample(f"need at least {MIN_SAMPLE} descriptors, got {n}")
    if n > max_sample:
        rng = np.random.default_rng(seed)
        pick = np.sort(rng.choice(n, size=max_sample, replace=False))
        bits = bits[pick]
        n = max_sample

    # exact integer moments: column sums and Gram matrix fit in int64 and
    # convert to float64 losslessly, so the fit is order-independent
    wide = bits.astype(np.int64)
    col_sums = wide.sum(axis=0)
    gram = wide.T @ wide
    mean = col_sums.astype(np.float64) / n
    cov = gram.astype(np.float64) / n - np.outer(mean, mean)
    cov = (cov + cov.T) / 2.0

    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:OUT_DIM]
    top_vals = eigvals[order]
    top_rows = eigvecs[:, order].T.copy()

    tol = max(float(eigvals.max()) * 1e-10, 1e-12)
    live = [top_rows[i] for i in range(OUT_DIM) if top_vals[i] > tol]
    if len(live) < OUT_DIM:
        live = _complete_basis(live)
    proj = _fix_signs(np.vstack(live))
    return PcaModel(mean=mean, projection=proj, trained_on=n)


def project_real(descriptors: np.ndarray, model: PcaModel) -> np.ndarray:
    """Centered projection kept as reals: (n, 128) float32."""
    bits = _unpack(descriptors).astype(np.float64)
    z = (bits - model.mean) @ model.projection.T
    return z.astype(np.float32)


def encode_many(descriptors: np.ndarray, model: PcaModel) -> np.ndarray:
    """Sign-binarized projection: (n, 16) uint8, bit j = component j > 0."""
    bits = _unpack(descriptors).astype(np.float64)
    z = (bits - model.mean) @ model.projection.T
    return np.packbits(z > 0, axis=1, bitorder="little")


def encode(descriptor: np.ndarray, model: PcaModel) -> np.ndarray:
    """One descriptor (32 bytes) to one code (16 bytes)."""
    return encode_many(np.asarray(descriptor, dtype=np.uint8).reshape(1, -1), model)[0]


def save_pca(model: PcaModel) -> bytes:
    parts = [
        PCA_MAGIC,
        struct.pack("<H", PCA_VERSION),
        model.mean.astype("<f8").tobytes(),
        model.projection.astype("<f8").tobytes(),
    ]
    return b"".join(parts)


def load_pca(raw: bytes) -> PcaModel:
    expected = len(PCA_MAGIC) + 2 + IN_DIM * 8 + OUT_DIM * IN_DIM * 8
    if len(raw) < 6 or raw[:4] != PCA_MAGIC:
        raise CorruptModel("bad magic: not a projection model file")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != PCA_VERSION:
        raise CorruptModel(f"unsupported model version {version}")
    if len(raw) != expected:
        raise CorruptModel(f"model file is {len(raw)} bytes, expected {expected}")
    mean = np.frombuffer(raw, dtype="<f8", count=IN_DIM, offset=6).copy()
    proj = (
        np.frombuffer(raw, dtype="<f8", count=OUT_DIM * IN_DIM, offset=6 + IN_DIM * 8)
        .reshape(OUT_DIM, IN_DIM)
        .copy()
    )
    if not np.isfinite(mean).all() or not np.isfinite(proj).all():
        raise CorruptModel("model contains non-finite values")
    return PcaModel(mean=mean, projection=proj, trained_on=0)


def save_pca_file(model: PcaModel, path: str) -> None:
    with open(path, "wb") as f:
        f.write(save_pca(model))


def load_pca_file(path: str) -> PcaModel:
    with open(path, "rb") as f:
        return load_pca(f.read())
