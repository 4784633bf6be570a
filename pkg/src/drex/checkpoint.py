"""Binary checkpoint format: config + training constants + weights + EMA.

Layout::

    magic "DRXC" | version u32 LE | header_len u64 LE | header JSON (UTF-8)
    | parameter arrays as f32 LE, in header order
    | EMA shadow arrays as f32 LE, same order (iff ema_present)

The header JSON is canonical (sorted keys, no whitespace), so identical
checkpoints serialize to identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import ParamStore, Tensor
from .exceptions import CheckpointError, CheckpointVersionError
from .model import DrexParameters, FusionConfig
from .optim import EmaState

MAGIC = b"DRXC"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


@dataclass
class Checkpoint:
    """Trained weights plus everything needed to reproduce evaluation."""

    params: DrexParameters
    ema: EmaState | None
    train_record: dict

    def eval_params(self, use_ema: bool | None = None) -> DrexParameters:
        """Weights to evaluate with: the EMA shadow by default, raw otherwise."""
        if use_ema is None:
            use_ema = bool(self.train_record.get("eval_with_ema", True))
        if use_ema:
            if self.ema is None:
                raise CheckpointError("checkpoint has no EMA shadow to evaluate with")
            return DrexParameters(self.params.config, self.ema.as_param_store())
        return self.params


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write the checkpoint; byte-deterministic for identical content."""
    store = ckpt.params.store
    names = store.names()
    header = {
        "format_version": FORMAT_VERSION,
        "config": ckpt.params.config.to_dict(),
        "train_record": ckpt.train_record,
        "params": [{"name": n, "shape": list(store[n].data.shape)} for n in names],
        "ema_present": ckpt.ema is not None,
        "ema_decay": ckpt.ema.decay if ckpt.ema is not None else None,
        "dtype": "float32",
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header_bytes)), header_bytes]
    for n in names:
        parts.append(store[n].data.astype("<f4", copy=False).tobytes())
    if ckpt.ema is not None:
        if set(ckpt.ema.shadow) != set(names):
            raise CheckpointError("EMA shadow names do not match the parameter names")
        for n in names:
            parts.append(ckpt.ema.shadow[n].astype("<f4", copy=False).tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> Checkpoint:
    """Read a checkpoint back; shapes come from the header, never assumed."""
    buf = Path(path).read_bytes()
    if len(buf) < _PREFIX.size:
        raise CheckpointError(f"file too short for a checkpoint prefix ({len(buf)} bytes)")
    magic, version, header_len = _PREFIX.unpack_from(buf, 0)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version}")
    offset = _PREFIX.size
    if len(buf) < offset + header_len:
        raise CheckpointError("checkpoint truncated inside header")
    try:
        header = json.loads(buf[offset : offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError("checkpoint header is not valid JSON") from exc
    offset += header_len

    try:
        config = FusionConfig.from_dict(header["config"])
        entries = header["params"]
        ema_present = header["ema_present"]
        train_record = header["train_record"]
    except KeyError as exc:
        raise CheckpointError(f"checkpoint header missing field {exc}") from exc

    def read_arrays() -> dict[str, np.ndarray]:
        nonlocal offset
        arrays = {}
        for entry in entries:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            need = 4 * count
            if offset + need > len(buf):
                raise CheckpointError(f"checkpoint truncated inside array {entry['name']!r}")
            arr = np.frombuffer(buf, dtype="<f4", count=count, offset=offset).reshape(shape)
            arrays[entry["name"]] = arr.copy()
            offset += need
        return arrays

    param_arrays = read_arrays()
    ema = None
    if ema_present:
        shadow = read_arrays()
        decay = header.get("ema_decay")
        if decay is None:
            raise CheckpointError("EMA shadow present but ema_decay missing from header")
        ema = EmaState(shadow, float(decay))
    if offset != len(buf):
        raise CheckpointError(f"{len(buf) - offset} trailing bytes after checkpoint arrays")

    store = ParamStore({name: Tensor(arr) for name, arr in param_arrays.items()})
    return Checkpoint(params=DrexParameters(config, store), ema=ema, train_record=train_record)
