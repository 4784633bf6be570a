"""Writer for the DRXF v1 feature-file format (the cross-tool contract).

Layout::

    magic "DRXF" | version u32 LE | record_count u64 LE | dino_dim u32 LE
    | n_blocks u32 LE | block_dims u32 LE x n_blocks
    per record:
      id_len u32 LE | id UTF-8 | score_flag u8 | score f32 LE (iff flag == 1)
      | dino f32 LE x dino_dim | resnet f32 LE x sum(block_dims)

This module implements the byte format directly; the training-side tool
has its own independent reader/writer of the same layout.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"DRXF"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sIQII")


class DrxfWriteError(Exception):
    pass


def write_drxf(
    path,
    records: list[tuple[str, np.ndarray, np.ndarray, float | None]],
    dino_dim: int,
    block_dims: tuple[int, ...],
) -> None:
    """Write (id, dino, resnet, score) rows; vectors are stored as f32 LE."""
    resnet_dim = sum(block_dims)
    parts = [
        _HEADER.pack(MAGIC, FORMAT_VERSION, len(records), dino_dim, len(block_dims)),
        struct.pack(f"<{len(block_dims)}I", *block_dims),
    ]
    seen: set[str] = set()
    for rec_id, dino, resnet, score in records:
        if rec_id in seen:
            raise DrxfWriteError(f"duplicate record id {rec_id!r}")
        seen.add(rec_id)
        dino = np.ascontiguousarray(dino, dtype="<f4").reshape(-1)
        resnet = np.ascontiguousarray(resnet, dtype="<f4").reshape(-1)
        if dino.size != dino_dim:
            raise DrxfWriteError(f"{rec_id!r}: dino length {dino.size} != {dino_dim}")
        if resnet.size != resnet_dim:
            raise DrxfWriteError(f"{rec_id!r}: resnet length {resnet.size} != {resnet_dim}")
        if not np.isfinite(dino).all() or not np.isfinite(resnet).all():
            raise DrxfWriteError(f"{rec_id!r}: non-finite feature values")
        if score is not None and not 0.0 <= score <= 1.0:
            raise DrxfWriteError(f"{rec_id!r}: score {score} outside [0, 1]")
        id_bytes = rec_id.encode("utf-8")
        parts.append(struct.pack("<I", len(id_bytes)))
        parts.append(id_bytes)
        if score is None:
            parts.append(b"\x00")
        else:
            parts.append(b"\x01")
            parts.append(struct.pack("<f", float(np.float32(score))))
        parts.append(dino.tobytes())
        parts.append(resnet.tobytes())
    Path(path).write_bytes(b"".join(parts))
