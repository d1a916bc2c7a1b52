"""Versioned binary checkpoint container.

Layout (little endian)::

    b"CGVLCKPT" | u32 version | u32 config_len | config JSON | u64 step | u32 n_tensors
    per tensor: u16 name_len | name | u8 flags (bit 0 = trainable) | u8 ndim | u32 * ndim shape | f64 data
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError, IncompatibleVersionError

MAGIC = b"CGVLCKPT"
VERSION = 1


@dataclass
class Checkpoint:
    config: dict
    tensors: dict                       # name -> float64 array
    trainable: dict = field(default_factory=dict)  # name -> bool
    step: int = 0

    def config_bytes(self):
        return json.dumps(self.config, sort_keys=True, separators=(",", ":")).encode()


def to_bytes(ckpt):
    buf = io.BytesIO()
    cfg = ckpt.config_bytes()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(cfg)))
    buf.write(cfg)
    buf.write(struct.pack("<QI", int(ckpt.step), len(ckpt.tensors)))
    for name, arr in ckpt.tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        raw = name.encode()
        flags = 1 if ckpt.trainable.get(name, False) else 0
        buf.write(struct.pack("<H", len(raw)) + raw)
        buf.write(struct.pack("<BB", flags, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr).astype("<f8").tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, raw):
        self.raw = raw
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.raw):
            raise CheckpointError("checkpoint is truncated")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def from_bytes(raw):
    r = _Reader(raw)
    if r.take(8) != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic bytes")
    version, cfg_len = r.unpack("<II")
    if version != VERSION:
        raise IncompatibleVersionError(f"checkpoint format version {version} is not supported (expected {VERSION})")
    try:
        config = json.loads(r.take(cfg_len).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt config block: {exc}") from None
    step, n = r.unpack("<QI")
    tensors, trainable = {}, {}
    for _ in range(n):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode()
        flags, ndim = r.unpack("<BB")
        shape = r.unpack(f"<{ndim}I")
        count = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
        trainable[name] = bool(flags & 1)
    if r.pos != len(raw):
        raise CheckpointError("trailing bytes after the last tensor")
    return Checkpoint(config=config, tensors=tensors, trainable=trainable, step=step)


def save_checkpoint(path, ckpt):
    Path(path).write_bytes(to_bytes(ckpt))


def load_checkpoint(path):
    return from_bytes(Path(path).read_bytes())
