"""Exact flat nearest-neighbor index with two retrieval modes.

Every query scans all stored features, so results are exact by
construction. Binary features (packed bit vectors) use a popcount
kernel; because bits are 0/1 coordinates, Hamming distance equals
squared Euclidean distance and the fast path is identical to the
arithmetic definition. Real features use squared L2 in float64.

Retrieval modes mirror the two ways multi-feature and single-feature
pipelines rank images: per-feature KNN with vote aggregation, and plain
distance ranking over one vector per image. All ties are broken
deterministically (votes desc, then summed contributing distance asc,
then insertion order), so identical inputs always produce identical
rankings.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CorruptIndex,
    DuplicateImageId,
    EmptyQuery,
    KindMismatch,
    MultiFeatureIndex,
)
from .feature_io import ByteReader, FeatureKind

INDEX_MAGIC = b"NDIX"
INDEX_VERSION = 1
_KIND_WIRE = {"binary": 0, "real": 1}
_KIND_UNWIRE = {v: k for k, v in _KIND_WIRE.items()}

DEFAULT_K = 100
DEFAULT_N = 10


@dataclass(frozen=True)
class QueryParams:
    k: int = DEFAULT_K  # neighbors per query feature
    n: int = DEFAULT_N  # images to return

    def __post_init__(self) -> None:
        if self.k < 1 or self.n < 1:
            raise ValueError(f"k and n must be >= 1, got k={self.k} n={self.n}")


@dataclass(frozen=True)
class RankedImage:
    image_id: str
    score: float
    rank: int  # 1-based


@dataclass(frozen=True)
class RetrievalResult:
    entries: tuple[RankedImage, ...]
    mode: str  # "votes" | "distance"


@dataclass(frozen=True)
class FlatIndex:
    """Immutable flat feature store; insertion order defines tie-breaks."""

    kind: FeatureKind
    features: np.ndarray = field(repr=False)  # (N, width) uint8 or float32
    owner: np.ndarray = field(repr=False)  # (N,) image index per feature
    image_ids: tuple[str, ...]
    feature_counts: np.ndarray = field(repr=False)  # (n_images,)

    def __post_init__(self) -> None:
        for arr in (self.features, self.owner, self.feature_counts):
            arr.flags.writeable = False

    @property
    def n_images(self) -> int:
        return len(self.image_ids)

    @property
    def n_features(self) -> int:
        return self.features.shape[0]


def build(images: list[tuple[str, np.ndarray]], kind: FeatureKind) -> FlatIndex:
    """Assemble a flat index from (image_id, feature array) pairs.

    Images with zero features are registered but can never be retrieved.
    """
    ids: list[str] = []
    seen: set[str] = set()
    arrays: list[np.ndarray] = []
    counts: list[int] = []
    for image_id, arr in images:
        if image_id in seen:
            raise DuplicateImageId(f"duplicate image id {image_id!r}")
        seen.add(image_id)
        a = kind.check_array(arr, what=f"features of {image_id!r}")
        ids.append(image_id)
        arrays.append(a)
        counts.append(a.shape[0])
    width = kind.dim // 8 if kind.code == "binary" else kind.dim
    dtype = np.uint8 if kind.code == "binary" else np.float32
    if arrays:
        features = np.vstack(arrays)
    else:
        features = np.zeros((0, width), dtype=dtype)
    owner = np.repeat(np.arange(len(ids), dtype=np.int64), np.asarray(counts, np.int64))
    return FlatIndex(
        kind=kind,
        features=np.ascontiguousarray(features, dtype=dtype),
        owner=owner,
        image_ids=tuple(ids),
        feature_counts=np.asarray(counts, dtype=np.int64),
    )


def packed_hamming(stack: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Hamming distance from packed query bits to each packed row."""
    return np.bitwise_count(stack ^ q[None, :]).sum(axis=1, dtype=np.int64)


def squared_l2(stack: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Squared Euclidean distance to each row, float64 pairwise summation.

    The spelling matters: (diff**2).sum(axis=1) is the canonical reduction
    any independent reimplementation lands on, so results are comparable
    bit for bit.
    """
    diff = stack.astype(np.float64) - q.astype(np.float64)
    return (diff * diff).sum(axis=1)


def _check_query_feature(kind: FeatureKind, q: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(q)
    if a.ndim != 1:
        raise KindMismatch(f"query feature must be 1-D, got shape {a.shape}")
    return kind.check_array(a[None, :], what="query feature")[0]


def knn_features(ix: FlatIndex, q: np.ndarray, k: int) -> list[tuple[int, float]]:
    """The exact k nearest stored features to one query feature.

    Returns (feature index, distance) pairs ordered by distance then by
    insertion index. Fewer than k pairs come back only when the index
    holds fewer than k features.
    """
    qa = _check_query_feature(ix.kind, q)
    idx, dist = _knn_arrays(ix, qa, k)
    return list(zip(idx.tolist(), dist.tolist()))


def _knn_arrays(ix: FlatIndex, qa: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    n = ix.n_features
    if n == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.float64)
    if ix.kind.code == "binary":
        d = packed_hamming(ix.features, qa)
        if k >= n:
            order = np.argsort(d, kind="stable")
            return order, d[order].astype(np.float64)
        # composite integer key makes (distance, insertion index) unique,
        # so argpartition cannot split boundary ties incorrectly
        key = d * np.int64(n) + np.arange(n, dtype=np.int64)
        picked = np.argpartition(key, k - 1)[:k]
        picked = picked[np.argsort(key[picked])]
        return picked, d[picked].astype(np.float64)
    d = squared_l2(ix.features, qa)
    if k >= n:
        order = np.argsort(d, kind="stable")
        return order, d[order]
    part = np.argpartition(d, k - 1)[:k]
    boundary = d[part].max()
    # re-gather every feature at or below the boundary distance so ties
    # at the cut are resolved by insertion order, not partition whim
    cand = np.flatnonzero(d <= boundary)
    cand = cand[np.argsort(d[cand], kind="stable")][:k]
    return cand, d[cand]


def query_votes(ix: FlatIndex, qset: np.ndarray, p: QueryParams = QueryParams()) -> RetrievalResult:
    """Vote-aggregation retrieval for multi-feature images.

    Each of the k nearest stored features per query feature casts one
    vote for its owning image. Images are ranked by votes descending,
    then by the summed distance of their contributing features, then by
    insertion order.
    """
    qa = ix.kind.check_array(np.ascontiguousarray(qset), what="query set")
    if qa.shape[0] == 0:
        raise EmptyQuery("query has no features")
    votes = np.zeros(ix.n_images, dtype=np.int64)
    dist_sums = np.zeros(ix.n_images, dtype=np.float64)
    for row in qa:
        idx, dist = _knn_arrays(ix, row, p.k)
        owners = ix.owner[idx]
        votes += np.bincount(owners, minlength=ix.n_images)
        dist_sums += np.bincount(owners, weights=dist, minlength=ix.n_images)
    return _rank_votes(ix, votes, dist_sums, p.n)


def _rank_votes(
    ix: FlatIndex, votes: np.ndarray, dist_sums: np.ndarray, n: int
) -> RetrievalResult:
    retrievable = np.flatnonzero(ix.feature_counts > 0)
    order = np.lexsort(
        (retrievable, dist_sums[retrievable], -votes[retrievable])
    )
    chosen = retrievable[order][:n]
    entries = tuple(
        RankedImage(ix.image_ids[i], float(votes[i]), rank)
        for rank, i in enumerate(chosen.tolist(), start=1)
    )
    return RetrievalResult(entries=entries, mode="votes")


def query_distance(
    ix: FlatIndex, q: np.ndarray, p: QueryParams = QueryParams()
) -> RetrievalResult:
    """Distance retrieval for single-vector-per-image indexes."""
    if ix.n_images > 0 and not (ix.feature_counts == 1).all():
        bad = ix.image_ids[int(np.flatnonzero(ix.feature_counts != 1)[0])]
        raise MultiFeatureIndex(
            f"distance mode needs exactly one feature per image; {bad!r} breaks that"
        )
    qa = _check_query_feature(ix.kind, q)
    if ix.n_features == 0:
        return RetrievalResult(entries=(), mode="distance")
    if ix.kind.code == "binary":
        d = packed_hamming(ix.features, qa).astype(np.float64)
    else:
        d = squared_l2(ix.features, qa)
    order = np.argsort(d, kind="stable")[: p.n]
    entries = tuple(
        RankedImage(ix.image_ids[int(i)], float(d[i]), rank)
        for rank, i in enumerate(order.tolist(), start=1)
    )
    return RetrievalResult(entries=entries, mode="distance")


def save(ix: FlatIndex) -> bytes:
    """Serialize the index; layout documented in the module format notes."""
    parts = [
        INDEX_MAGIC,
        struct.pack(
            "<HBIQQ",
            INDEX_VERSION,
            _KIND_WIRE[ix.kind.code],
            ix.kind.dim,
            ix.n_images,
            ix.n_features,
        ),
    ]
    for image_id, count in zip(ix.image_ids, ix.feature_counts.tolist()):
        ident = image_id.encode("utf-8")
        parts.append(struct.pack("<H", len(ident)))
        parts.append(ident)
        parts.append(struct.pack("<I", count))
    if ix.kind.code == "real":
        parts.append(ix.features.astype("<f4").tobytes())
    else:
        parts.append(ix.features.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def load(data: bytes) -> FlatIndex:
    """Parse serialized index bytes, validating structure and checksum."""
    rd = ByteReader(data, CorruptIndex)
    if rd.take(4, "magic") != INDEX_MAGIC:
        raise CorruptIndex("bad magic, not an index file")
    version, kind_byte, dim, n_images, n_features = rd.unpack("<HBIQQ", "header")
    if version != INDEX_VERSION:
        raise CorruptIndex(f"unsupported version {version}, expected {INDEX_VERSION}")
    if kind_byte not in _KIND_UNWIRE:
        raise CorruptIndex(f"unknown kind byte {kind_byte}")
    try:
        kind = FeatureKind(_KIND_UNWIRE[kind_byte], dim)
    except KindMismatch as exc:
        raise CorruptIndex(str(exc)) from exc
    ids: list[str] = []
    counts: list[int] = []
    seen: set[str] = set()
    for i in range(n_images):
        (id_len,) = rd.unpack("<H", f"id length of image {i}")
        try:
            image_id = rd.take(id_len, f"id of image {i}").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptIndex(f"image {i} id is not valid utf-8") from exc
        if image_id in seen:
            raise CorruptIndex(f"duplicate image id {image_id!r}")
        seen.add(image_id)
        (count,) = rd.unpack("<I", f"feature count of {image_id!r}")
        ids.append(image_id)
        counts.append(count)
    if sum(counts) != n_features:
        raise CorruptIndex(
            f"image table sums to {sum(counts)} features, header says {n_features}"
        )
    width = kind.dim // 8 if kind.code == "binary" else kind.dim
    payload_len = n_features * (width if kind.code == "binary" else width * 4)
    payload = rd.take(payload_len, "feature payload")
    if rd.remaining() != 4:
        raise CorruptIndex(f"{rd.remaining() - 4} unexpected bytes before checksum")
    (stored_crc,) = rd.unpack("<I", "checksum")
    actual = zlib.crc32(data[:-4]) & 0xFFFFFFFF
    if stored_crc != actual:
        raise CorruptIndex(
            f"checksum mismatch: stored {stored_crc:#010x}, computed {actual:#010x}"
        )
    if kind.code == "binary":
        features = np.frombuffer(payload, dtype=np.uint8).reshape(n_features, width)
    else:
        features = np.frombuffer(payload, dtype="<f4").reshape(n_features, width)
    counts_arr = np.asarray(counts, dtype=np.int64)
    owner = np.repeat(np.arange(n_images, dtype=np.int64), counts_arr)
    return FlatIndex(
        kind=kind,
        features=features.copy(),
        owner=owner,
        image_ids=tuple(ids),
        feature_counts=counts_arr,
    )


def save_file(path: str, ix: FlatIndex) -> None:
    with open(path, "wb") as fh:
        fh.write(save(ix))


def load_file(path: str) -> FlatIndex:
    with open(path, "rb") as fh:
        return load(fh.read())
