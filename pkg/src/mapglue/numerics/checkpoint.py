"""MGCK checkpoint container.

Layout (all integers u32 little-endian)::

    b"MGCK" | version | entry count | entries...
    entry := name length | UTF-8 name | rank | extents * rank | float32 LE payload
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MGCK"
VERSION = 1
CONFIG_ENTRY = "__config__"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: dict[str, np.ndarray], config: dict | None = None) -> None:
    """Write named arrays (cast to float32) and an optional JSON config entry."""
    entries = dict(tensors)
    if config is not None:
        raw = json.dumps(config, sort_keys=True).encode("utf-8")
        entries[CONFIG_ENTRY] = np.frombuffer(raw, dtype=np.uint8).astype(np.float32)
    chunks = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name in sorted(entries):
        arr = np.asarray(entries[name])
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict | None]:
    """Inverse of :func:`save_checkpoint`; returns ``(tensors, config)``."""
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not an MGCK file")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise CheckpointError(f"{path}: truncated")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    version, count = take("<II")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported MGCK version {version}")
    tensors: dict[str, np.ndarray] = {}
    config = None
    for _ in range(count):
        (n,) = take("<I")
        if pos + n > len(buf):
            raise CheckpointError(f"{path}: truncated")
        name = buf[pos : pos + n].decode("utf-8")
        pos += n
        (rank,) = take("<I")
        shape = take(f"<{rank}I")
        size = int(np.prod(shape)) * 4
        if pos + size > len(buf):
            raise CheckpointError(f"{path}: truncated payload for {name}")
        arr = np.frombuffer(buf, dtype="<f4", count=size // 4, offset=pos).reshape(shape).astype(np.float32)
        pos += size
        if name == CONFIG_ENTRY:
            config = json.loads(arr.astype(np.uint8).tobytes().decode("utf-8"))
        else:
            tensors[name] = arr
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return tensors, config
