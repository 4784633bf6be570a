"""DRXF v1: the precomputed-feature file format and its validation.

One record per image: a global transformer embedding (default 384 dims),
a concatenation of four pooled convolutional stages (default
256+512+1024+2048 = 3840 dims), and an optional ground-truth complexity
score in [0, 1]. Values are stored as little-endian float32; ids are
length-prefixed UTF-8. A missing score is encoded by a presence flag, not
a sentinel, because 0.0 is a legal score.

Layout::

    magic "DRXF" | version u32 | record_count u64 | dino_dim u32
    | n_blocks u32 | block_dims u32 x n_blocks
    per record:
      id_len u32 | id bytes | score_flag u8 | score f32 (iff flag == 1)
      | dino f32 x dino_dim | resnet f32 x sum(block_dims)

All integers and floats are little-endian.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import (
    DimensionMismatchError,
    FeatureFormatError,
    NonFiniteValueError,
    TruncatedPayloadError,
    ValidationError,
)

MAGIC = b"DRXF"
FORMAT_VERSION = 1

DEFAULT_DINO_DIM = 384
DEFAULT_BLOCK_DIMS = (256, 512, 1024, 2048)

_HEADER_FIXED = struct.Struct("<4sIQII")  # magic, version, count, dino_dim, n_blocks


def _as_f32_vector(values, name: str) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=np.float32)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    return arr


@dataclass
class FeatureRecord:
    """One image's precomputed features and optional ground-truth score.

    Vectors are coerced to contiguous float32 on construction so that a
    write/read cycle through a DRXF file is bitwise lossless.
    """

    id: str
    dino: np.ndarray
    resnet: np.ndarray
    score: float | None = None

    def __post_init__(self):
        self.dino = _as_f32_vector(self.dino, "dino")
        self.resnet = _as_f32_vector(self.resnet, "resnet")
        if self.score is not None:
            # Stored as f32 on disk; round now so the value never changes later.
            self.score = float(np.float32(self.score))

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureRecord):
            return NotImplemented
        return (
            self.id == other.id
            and self.score == other.score
            and np.array_equal(self.dino, other.dino)
            and np.array_equal(self.resnet, other.resnet)
        )


@dataclass
class DatasetManifest:
    """An ordered collection of records sharing one feature geometry."""

    records: list[FeatureRecord] = field(default_factory=list)
    split_name: str = ""
    dino_dim: int = DEFAULT_DINO_DIM
    block_dims: tuple[int, ...] = DEFAULT_BLOCK_DIMS

    def __post_init__(self):
        self.block_dims = tuple(int(d) for d in self.block_dims)
        self.dino_dim = int(self.dino_dim)

    @property
    def resnet_dim(self) -> int:
        return sum(self.block_dims)

    def __len__(self) -> int:
        return len(self.records)

    def __eq__(self, other) -> bool:
        if not isinstance(other, DatasetManifest):
            return NotImplemented
        return (
            self.split_name == other.split_name
            and self.dino_dim == other.dino_dim
            and self.block_dims == other.block_dims
            and self.records == other.records
        )

    def block_slice(self, i: int) -> slice:
        """Column range of residual stage ``i`` (1-based) inside the resnet vector."""
        if not 1 <= i <= len(self.block_dims):
            raise IndexError(f"block index {i} outside 1..{len(self.block_dims)}")
        start = sum(self.block_dims[: i - 1])
        return slice(start, start + self.block_dims[i - 1])

    def dino_matrix(self) -> np.ndarray:
        """Stacked (n, dino_dim) float32 matrix of all records."""
        if not self.records:
            return np.empty((0, self.dino_dim), dtype=np.float32)
        return np.stack([r.dino for r in self.records])

    def resnet_matrix(self) -> np.ndarray:
        if not self.records:
            return np.empty((0, self.resnet_dim), dtype=np.float32)
        return np.stack([r.resnet for r in self.records])

    def scores(self) -> np.ndarray:
        """Ground-truth scores as float64; raises if any record lacks one."""
        from .exceptions import MissingScoreError

        out = np.empty(len(self.records), dtype=np.float64)
        for k, rec in enumerate(self.records):
            if rec.score is None:
                raise MissingScoreError(f"record {rec.id!r} has no ground-truth score")
            out[k] = rec.score
        return out

    def ids(self) -> list[str]:
        return [r.id for r in self.records]


@dataclass(frozen=True)
class Violation:
    """One invariant breach, naming the offending record and the rule."""

    record_id: str
    rule: str
    detail: str

    def __str__(self) -> str:
        return f"{self.record_id}: {self.rule} ({self.detail})"


def validate_manifest(manifest: DatasetManifest) -> list[Violation]:
    """Check every type invariant; an empty list means the manifest is valid.

    Violations are data, not errors: each one names the record id and the
    broken rule so callers can report them all at once.
    """
    violations: list[Violation] = []
    if manifest.dino_dim <= 0:
        violations.append(Violation("<manifest>", "dino_dim not positive", str(manifest.dino_dim)))
    if not manifest.block_dims or any(d <= 0 for d in manifest.block_dims):
        violations.append(Violation("<manifest>", "bad block_dims", repr(manifest.block_dims)))

    seen: set[str] = set()
    resnet_dim = manifest.resnet_dim
    for rec in manifest.records:
        if rec.id in seen:
            violations.append(Violation(rec.id, "duplicate id", "ids must be unique"))
        seen.add(rec.id)
        if rec.dino.shape[0] != manifest.dino_dim:
            violations.append(
                Violation(rec.id, "dino length", f"{rec.dino.shape[0]} != {manifest.dino_dim}")
            )
        if rec.resnet.shape[0] != resnet_dim:
            violations.append(
                Violation(rec.id, "resnet length", f"{rec.resnet.shape[0]} != {resnet_dim}")
            )
        if not np.isfinite(rec.dino).all() or not np.isfinite(rec.resnet).all():
            violations.append(Violation(rec.id, "non-finite value", "NaN or inf in features"))
        if rec.score is not None:
            if not np.isfinite(rec.score):
                violations.append(Violation(rec.id, "non-finite value", "score is not finite"))
            elif not 0.0 <= rec.score <= 1.0:
                violations.append(Violation(rec.id, "score out of [0,1]", f"score={rec.score}"))
    return violations


def write_features(manifest: DatasetManifest, path) -> None:
    """Serialize a manifest to a DRXF v1 file.

    Refuses invalid manifests; the output is byte-deterministic for
    identical input.
    """
    violations = validate_manifest(manifest)
    if violations:
        summary = "; ".join(str(v) for v in violations[:5])
        raise ValidationError(f"{len(violations)} violation(s): {summary}")

    parts: list[bytes] = [
        _HEADER_FIXED.pack(
            MAGIC, FORMAT_VERSION, len(manifest.records), manifest.dino_dim, len(manifest.block_dims)
        ),
        struct.pack(f"<{len(manifest.block_dims)}I", *manifest.block_dims),
    ]
    for rec in manifest.records:
        id_bytes = rec.id.encode("utf-8")
        parts.append(struct.pack("<I", len(id_bytes)))
        parts.append(id_bytes)
        if rec.score is None:
            parts.append(b"\x00")
        else:
            parts.append(b"\x01")
            parts.append(struct.pack("<f", rec.score))
        parts.append(rec.dino.astype("<f4", copy=False).tobytes())
        parts.append(rec.resnet.astype("<f4", copy=False).tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_features(path) -> DatasetManifest:
    """Parse a DRXF v1 file; dims are taken from the header, never assumed.

    Structural problems raise distinct errors (bad magic/version,
    truncation naming the record index, non-finite values). Data-level
    rules (score range, id uniqueness) are the domain of
    :func:`validate_manifest`.
    """
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER_FIXED.size:
        raise FeatureFormatError(f"file too short for a DRXF header ({len(buf)} bytes)")
    magic, version, count, dino_dim, n_blocks = _HEADER_FIXED.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FeatureFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FeatureFormatError(f"unsupported format version {version}")
    offset = _HEADER_FIXED.size
    if len(buf) < offset + 4 * n_blocks:
        raise FeatureFormatError("header truncated inside block_dims")
    block_dims = struct.unpack_from(f"<{n_blocks}I", buf, offset)
    offset += 4 * n_blocks
    if dino_dim == 0 or n_blocks == 0 or any(d == 0 for d in block_dims):
        raise FeatureFormatError(f"degenerate dims in header: dino={dino_dim}, blocks={block_dims}")
    resnet_dim = sum(block_dims)

    records: list[FeatureRecord] = []
    for idx in range(count):
        try:
            (id_len,) = struct.unpack_from("<I", buf, offset)
            offset += 4
            if offset + id_len > len(buf):
                raise struct.error
            id_bytes = buf[offset : offset + id_len]
            offset += id_len
            (flag,) = struct.unpack_from("<B", buf, offset)
            offset += 1
            score = None
            if flag == 1:
                (score,) = struct.unpack_from("<f", buf, offset)
                offset += 4
            elif flag != 0:
                raise FeatureFormatError(f"record {idx}: bad score flag {flag}")
            need = 4 * (dino_dim + resnet_dim)
            if offset + need > len(buf):
                raise struct.error
            vec = np.frombuffer(buf, dtype="<f4", count=dino_dim + resnet_dim, offset=offset)
            offset += need
        except struct.error:
            raise TruncatedPayloadError(f"file truncated inside record {idx}") from None
        try:
            rec_id = id_bytes.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FeatureFormatError(f"record {idx}: id is not valid UTF-8") from exc
        if not np.isfinite(vec).all() or (score is not None and not np.isfinite(score)):
            raise NonFiniteValueError(f"record {idx} ({rec_id!r}) contains non-finite values")
        records.append(
            FeatureRecord(
                id=rec_id,
                dino=vec[:dino_dim].copy(),
                resnet=vec[dino_dim:].copy(),
                score=score,
            )
        )
    if offset != len(buf):
        raise FeatureFormatError(f"{len(buf) - offset} trailing bytes after last record")
    return DatasetManifest(
        records=records, split_name="", dino_dim=dino_dim, block_dims=tuple(block_dims)
    )


def require_matching_dims(manifest: DatasetManifest, dino_dim: int, resnet_dim: int) -> None:
    """Raise unless the manifest geometry matches the model's configured dims."""
    if manifest.dino_dim != dino_dim or manifest.resnet_dim != resnet_dim:
        raise DimensionMismatchError(
            f"manifest carries ({manifest.dino_dim}, {manifest.resnet_dim}) features, "
            f"model expects ({dino_dim}, {resnet_dim})"
        )
