"""Feature-file serialization and manifest parsing.

The feature file is the interchange format between feature extractors
(including ones written in other languages) and the index builder. It is
a little-endian binary layout:

    magic "NDF1" | version u16 | kind u8 | dim u32 | image count u64
    per image: id length u16 | id utf-8 | feature count u32 | payload
    crc32 u32 over every preceding byte

Binary features pack one feature into ceil(dim/8) bytes, bit 0 stored in
the least significant bit of byte 0. Real features are dim float32
values per feature. Readers validate everything and raise
CorruptFeatureFile with a reason instead of crashing on hostile input.

Manifests are JSON-lines files; bad rows are flagged with their line
number and skipped rather than aborting the read.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from .errors import CorruptFeatureFile, DuplicateImageId, KindMismatch, NoValidRows

MAGIC = b"NDF1"
VERSION = 1
_KIND_WIRE = {"binary": 0, "real": 1}
_KIND_UNWIRE = {v: k for k, v in _KIND_WIRE.items()}
_VALID_DIMS = {"binary": (128, 256), "real": (128, 512)}

PLATFORMS = ("reddit", "4chan", "twitter", "other")
MODES = ("votes", "distance")


@dataclass(frozen=True)
class FeatureKind:
    """Tags a feature payload: 'binary' packed bits or 'real' float32."""

    code: str
    dim: int

    def __post_init__(self) -> None:
        if self.code not in _VALID_DIMS:
            raise KindMismatch(f"unknown feature kind {self.code!r}")
        if self.dim not in _VALID_DIMS[self.code]:
            raise KindMismatch(f"kind {self.code!r} does not support dim {self.dim}")

    @property
    def bytes_per_feature(self) -> int:
        return self.dim // 8 if self.code == "binary" else self.dim * 4

    def check_array(self, arr: np.ndarray, what: str = "features") -> np.ndarray:
        """Validate an array of features for this kind; returns it C-contiguous."""
        a = np.ascontiguousarray(arr)
        if self.code == "binary":
            if a.dtype != np.uint8 or a.ndim != 2 or a.shape[1] != self.dim // 8:
                raise KindMismatch(
                    f"{what}: expected uint8 (n, {self.dim // 8}), got "
                    f"{a.dtype} {a.shape}"
                )
        else:
            if a.dtype != np.float32 or a.ndim != 2 or a.shape[1] != self.dim:
                raise KindMismatch(
                    f"{what}: expected float32 (n, {self.dim}), got {a.dtype} {a.shape}"
                )
        return a


BINARY_128 = FeatureKind("binary", 128)
BINARY_256 = FeatureKind("binary", 256)
REAL_128 = FeatureKind("real", 128)
REAL_512 = FeatureKind("real", 512)


def write_features(
    images: Sequence[tuple[str, np.ndarray]], kind: FeatureKind
) -> bytes:
    """Serialize (image id, feature array) pairs to feature-file bytes."""
    seen: set[str] = set()
    parts = [MAGIC, struct.pack("<HBIQ", VERSION, _KIND_WIRE[kind.code], kind.dim, len(images))]
    for image_id, arr in images:
        if image_id in seen:
            raise DuplicateImageId(f"duplicate image id {image_id!r}")
        seen.add(image_id)
        ident = image_id.encode("utf-8")
        if len(ident) > 0xFFFF:
            raise KindMismatch(f"image id too long ({len(ident)} bytes)")
        a = kind.check_array(arr, what=f"features of {image_id!r}")
        parts.append(struct.pack("<H", len(ident)))
        parts.append(ident)
        parts.append(struct.pack("<I", a.shape[0]))
        if kind.code == "real":
            parts.append(a.astype("<f4").tobytes())
        else:
            parts.append(a.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


class ByteReader:
    """Cursor over a byte buffer that fails loudly on overrun."""

    def __init__(self, data: bytes, error: type[Exception]) -> None:
        self.data = data
        self.off = 0
        self.error = error

    def take(self, n: int, what: str) -> bytes:
        if n < 0 or self.off + n > len(self.data):
            raise self.error(
                f"truncated: needed {n} bytes for {what} at offset {self.off}, "
                f"have {len(self.data) - self.off}"
            )
        out = self.data[self.off : self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str, what: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def remaining(self) -> int:
        return len(self.data) - self.off


def read_features(data: bytes) -> tuple[FeatureKind, list[tuple[str, np.ndarray]]]:
    """Parse feature-file bytes, validating structure and checksum."""
    rd = ByteReader(data, CorruptFeatureFile)
    if rd.take(4, "magic") != MAGIC:
        raise CorruptFeatureFile("bad magic, not a feature file")
    (version,) = rd.unpack("<H", "version")
    if version != VERSION:
        raise CorruptFeatureFile(f"unsupported version {version}, expected {VERSION}")
    (kind_byte,) = rd.unpack("<B", "kind")
    if kind_byte not in _KIND_UNWIRE:
        raise CorruptFeatureFile(f"unknown kind byte {kind_byte}")
    (dim,) = rd.unpack("<I", "dim")
    try:
        kind = FeatureKind(_KIND_UNWIRE[kind_byte], dim)
    except KindMismatch as exc:
        raise CorruptFeatureFile(str(exc)) from exc
    (n_images,) = rd.unpack("<Q", "image count")
    images: list[tuple[str, np.ndarray]] = []
    seen: set[str] = set()
    for i in range(n_images):
        (id_len,) = rd.unpack("<H", f"id length of image {i}")
        raw_id = rd.take(id_len, f"id of image {i}")
        try:
            image_id = raw_id.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptFeatureFile(f"image {i} id is not valid utf-8") from exc
        if image_id in seen:
            raise CorruptFeatureFile(f"duplicate image id {image_id!r}")
        seen.add(image_id)
        (n_feat,) = rd.unpack("<I", f"feature count of {image_id!r}")
        payload_len = n_feat * kind.bytes_per_feature
        if payload_len > rd.remaining():
            raise CorruptFeatureFile(
                f"truncated: payload of {image_id!r} claims {payload_len} bytes, "
                f"have {rd.remaining()}"
            )
        payload = rd.take(payload_len, f"payload of {image_id!r}")
        if kind.code == "binary":
            arr = np.frombuffer(payload, dtype=np.uint8).reshape(n_feat, kind.dim // 8)
        else:
            arr = np.frombuffer(payload, dtype="<f4").reshape(n_feat, kind.dim)
        images.append((image_id, arr.copy()))
    (stored_crc,) = rd.unpack("<I", "checksum")
    if rd.remaining() != 0:
        raise CorruptFeatureFile(f"{rd.remaining()} bytes of trailing garbage")
    actual = zlib.crc32(data[: len(data) - 4]) & 0xFFFFFFFF
    if stored_crc != actual:
        raise CorruptFeatureFile(
            f"checksum mismatch: stored {stored_crc:#010x}, computed {actual:#010x}"
        )
    return kind, images


def save_features(
    path: str, images: Sequence[tuple[str, np.ndarray]], kind: FeatureKind
) -> None:
    with open(path, "wb") as fh:
        fh.write(write_features(images, kind))


def load_features(path: str) -> tuple[FeatureKind, list[tuple[str, np.ndarray]]]:
    with open(path, "rb") as fh:
        return read_features(fh.read())


# --- manifests ---------------------------------------------------------


@dataclass(frozen=True)
class ManifestIssue:
    line: int  # 1-based line number in the manifest
    reason: str


@dataclass(frozen=True)
class CorpusRow:
    id: str
    path: str
    platform: str
    posted_at: datetime
    url: str | None = None


@dataclass(frozen=True)
class QueryRow:
    query_path: str | None
    source_id: str
    manip_id: str
    skipped: bool = False
    reason: str | None = None


@dataclass(frozen=True)
class LabeledPairRow:
    query_id: str
    result_id: str
    phash_dist: float
    retrieval_score: float
    mode: str
    label: bool


def parse_rfc3339(text: str) -> datetime:
    """Parse an RFC 3339 timestamp; the UTC 'Z' suffix is accepted."""
    if not isinstance(text, str):
        raise ValueError(f"timestamp must be a string, got {type(text).__name__}")
    normalized = text[:-1] + "+00:00" if text.endswith(("Z", "z")) else text
    ts = datetime.fromisoformat(normalized)
    if ts.tzinfo is None:
        raise ValueError(f"timestamp {text!r} lacks a UTC offset")
    return ts.astimezone(timezone.utc)


def _iter_json_lines(lines: Iterable[str]):
    for line_no, raw in enumerate(lines, start=1):
        text = raw.strip()
        if not text:
            continue
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            yield line_no, None, f"invalid JSON: {exc.msg}"
            continue
        if not isinstance(obj, dict):
            yield line_no, None, "row is not a JSON object"
            continue
        yield line_no, obj, None


def _require_str(obj: dict, key: str) -> str:
    val = obj.get(key)
    if not isinstance(val, str) or not val:
        raise ValueError(f"missing or empty field {key!r}")
    return val


def read_corpus_manifest(
    lines: Iterable[str],
) -> tuple[list[CorpusRow], list[ManifestIssue]]:
    """Parse corpus rows {id, path, platform, posted_at, url?}.

    Bad rows are flagged with their line number; a duplicate id keeps the
    first row and flags the second. Raises NoValidRows if nothing parses.
    """
    rows: list[CorpusRow] = []
    issues: list[ManifestIssue] = []
    seen: set[str] = set()
    for line_no, obj, err in _iter_json_lines(lines):
        if err is not None:
            issues.append(ManifestIssue(line_no, err))
            continue
        try:
            row_id = _require_str(obj, "id")
            path = _require_str(obj, "path")
            platform = _require_str(obj, "platform")
            if platform not in PLATFORMS:
                raise ValueError(f"unknown platform {platform!r}")
            posted_at = parse_rfc3339(_require_str(obj, "posted_at"))
            url = obj.get("url")
            if url is not None and not isinstance(url, str):
                raise ValueError("url must be a string")
        except ValueError as exc:
            issues.append(ManifestIssue(line_no, str(exc)))
            continue
        if row_id in seen:
            issues.append(ManifestIssue(line_no, f"duplicate id {row_id!r}"))
            continue
        seen.add(row_id)
        rows.append(CorpusRow(row_id, path, platform, posted_at, url))
    if not rows:
        raise NoValidRows("corpus manifest contains no valid rows")
    return rows, issues


def read_query_manifest(
    lines: Iterable[str],
) -> tuple[list[QueryRow], list[ManifestIssue]]:
    """Parse query rows {query_path, source_id, manip_id, skipped?, reason?}."""
    rows: list[QueryRow] = []
    issues: list[ManifestIssue] = []
    for line_no, obj, err in _iter_json_lines(lines):
        if err is not None:
            issues.append(ManifestIssue(line_no, err))
            continue
        try:
            source_id = _require_str(obj, "source_id")
            manip_id = _require_str(obj, "manip_id")
            skipped = bool(obj.get("skipped", False))
            reason = obj.get("reason")
            query_path = None if skipped else _require_str(obj, "query_path")
        except ValueError as exc:
            issues.append(ManifestIssue(line_no, str(exc)))
            continue
        rows.append(QueryRow(query_path, source_id, manip_id, skipped, reason))
    if not rows:
        raise NoValidRows("query manifest contains no valid rows")
    return rows, issues


def read_labeled_pairs(
    lines: Iterable[str],
) -> tuple[list[LabeledPairRow], list[ManifestIssue]]:
    """Parse labeled pair rows for classifier training."""
    rows: list[LabeledPairRow] = []
    issues: list[ManifestIssue] = []
    for line_no, obj, err in _iter_json_lines(lines):
        if err is not None:
            issues.append(ManifestIssue(line_no, err))
            continue
        try:
            query_id = _require_str(obj, "query_id")
            result_id = _require_str(obj, "result_id")
            phash_dist = float(obj["phash_dist"])
            retrieval_score = float(obj["retrieval_score"])
            if phash_dist < 0:
                raise ValueError("phash_dist must be >= 0")
            mode = _require_str(obj, "mode")
            if mode not in MODES:
                raise ValueError(f"unknown mode {mode!r}")
            label = obj["label"]
            if not isinstance(label, bool):
                raise ValueError("label must be a boolean")
        except (KeyError, TypeError, ValueError) as exc:
            issues.append(ManifestIssue(line_no, f"bad row: {exc}"))
            continue
        rows.append(
            LabeledPairRow(query_id, result_id, phash_dist, retrieval_score, mode, label)
        )
    if not rows:
        raise NoValidRows("labeled-pair manifest contains no valid rows")
    return rows, issues


def read_manifest_file(path: str, reader):
    """Apply one of the read_* functions to a file on disk."""
    with open(path, "r", encoding="utf-8") as fh:
        return reader(fh)


def write_jsonl(path: str, rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
