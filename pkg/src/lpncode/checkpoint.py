"""Binary container for named float64 arrays.

Layout (all integers little-endian)::

    magic     8 bytes  b"LPNCKPT\\0"
    version   u32
    digest    u32 length + UTF-8 bytes   (config digest)
    meta      u32 length + UTF-8 JSON    (free-form run metadata)
    count     u32
    count x record:
        name  u32 length + UTF-8 bytes
        ndim  u32, then ndim x u64 dims
        data  prod(dims) x float64, little-endian
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

MAGIC = b"LPNCKPT\0"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _write_str(buf: list, s: str) -> None:
    b = s.encode("utf-8")
    buf.append(struct.pack("<I", len(b)))
    buf.append(b)


def save_arrays(path, arrays: "OrderedDict[str, np.ndarray]", digest: str = "", meta: dict | None = None) -> None:
    buf: list[bytes] = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    _write_str(buf, digest)
    _write_str(buf, json.dumps(meta or {}, sort_keys=True))
    buf.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        _write_str(buf, name)
        buf.append(struct.pack("<I", arr.ndim))
        buf.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.append(np.ascontiguousarray(arr).tobytes())
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(buf))
    tmp.replace(path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def load_arrays(path) -> tuple["OrderedDict[str, np.ndarray]", str, dict]:
    r = _Reader(Path(path).read_bytes())
    if r.take(8) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    digest = r.string()
    meta = json.loads(r.string())
    arrays: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(r.u32()):
        name = r.string()
        ndim = r.u32()
        shape = struct.unpack(f"<{ndim}Q", r.take(8 * ndim))
        size = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape)
        arrays[name] = arr.astype(np.float64)
    if r.pos != len(r.data):
        raise CheckpointError(f"{path}: trailing bytes")
    return arrays, digest, meta
