"""Versioned binary checkpoint format.

Layout (all little-endian):
    magic "SSGC" | u32 version=1 | u32 tensor count
    per tensor: u16 name length | UTF-8 name | u8 rank | rank * u32 dims
                | f64 data, row-major

Round-trips are bit exact.
"""

from __future__ import annotations

import struct

import numpy as np

__all__ = ["MAGIC", "VERSION", "save_checkpoint", "load_checkpoint",
           "CheckpointError"]

MAGIC = b"SSGC"
VERSION = 1


class CheckpointError(ValueError):
    """Malformed or unsupported checkpoint file."""


def save_checkpoint(path, tensors):
    """Write a name -> ndarray (or Tensor) mapping. Order is preserved."""
    items = []
    for name, value in tensors.items():
        arr = np.asarray(getattr(value, "data", value), dtype=np.float64)
        items.append((name, arr))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(items)))
        for name, arr in items:
            encoded = name.encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise CheckpointError(f"tensor name too long: {name!r}")
            if arr.ndim > 0xFF:
                raise CheckpointError(f"tensor rank too large: {arr.ndim}")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint back into an ordered name -> float64 ndarray dict."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise CheckpointError("bad magic; not a checkpoint file")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    offset = 12
    out = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        name = raw[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<B", raw, offset)
        offset += 1
        dims = struct.unpack_from(f"<{rank}I", raw, offset)
        offset += 4 * rank
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=offset)
        offset += 8 * n
        out[name] = arr.astype(np.float64).reshape(dims)
    if offset != len(raw):
        raise CheckpointError("trailing bytes after last tensor")
    return out
