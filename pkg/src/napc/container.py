"""Binary model container shared by float and quantized models.

Layout, all integers little-endian::

    offset 0   4 bytes   magic b"NAPC"
    offset 4   uint16    format version (1)
    offset 6   uint8     kind: 0 = float model, 1 = quantized model
    offset 7   uint8     reserved, 0
    offset 8   uint32    metadata length M
    offset 12  M bytes   UTF-8 JSON metadata; ``meta["tensors"]`` lists
                         {"name", "dtype", "shape"} in storage order
    12+M       ...       raw tensor blobs back to back in that order
                         ("<f4" float32 or "<i4" int32, C order)

The file must end exactly after the last blob.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"NAPC"
VERSION = 1
KIND_FLOAT = 0
KIND_QUANTIZED = 1
_HEADER = struct.Struct("<4sHBBI")
_DTYPES = {"<f4": np.dtype("<f4"), "<i4": np.dtype("<i4")}


def encode(kind: int, meta: dict, tensors: dict[str, np.ndarray]) -> bytes:
    meta = dict(meta)
    table = []
    blobs = []
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = "<i4" if np.issubdtype(arr.dtype, np.integer) else "<f4"
        conv = np.ascontiguousarray(arr, dtype=_DTYPES[code])
        if code == "<i4" and not np.array_equal(conv, arr):
            raise DataError(f"tensor {name!r} does not fit int32 storage")
        table.append({"name": name, "dtype": code, "shape": list(arr.shape)})
        blobs.append(conv.tobytes())
    meta["tensors"] = table
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _HEADER.pack(MAGIC, VERSION, kind, 0, len(meta_bytes)) + meta_bytes + b"".join(blobs)


def decode(data: bytes) -> tuple[int, dict, dict[str, np.ndarray]]:
    if len(data) < _HEADER.size:
        raise DataError("model file too short")
    magic, version, kind, _, meta_len = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise DataError("not a NAPC model file (bad magic)")
    if version != VERSION:
        raise DataError(f"unsupported model file version {version}")
    pos = _HEADER.size
    try:
        meta = json.loads(data[pos:pos + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"corrupt model metadata: {exc}") from exc
    pos += meta_len
    tensors = {}
    for t in meta["tensors"]:
        dt = _DTYPES.get(t["dtype"])
        if dt is None:
            raise DataError(f"unsupported tensor dtype {t['dtype']!r}")
        count = int(np.prod(t["shape"], dtype=np.int64))
        nbytes = count * dt.itemsize
        if pos + nbytes > len(data):
            raise DataError(f"model file truncated in tensor {t['name']!r}")
        arr = np.frombuffer(data, dtype=dt, count=count, offset=pos).reshape(t["shape"])
        tensors[t["name"]] = arr.astype(np.float32 if t["dtype"] == "<f4" else np.int64)
        pos += nbytes
    if pos != len(data):
        raise DataError("trailing bytes after last tensor")
    return kind, meta, tensors


def write(path, kind: int, meta: dict, tensors: dict[str, np.ndarray]) -> str:
    """Write a container; returns the sha256 of the file contents."""
    data = encode(kind, meta, tensors)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def read(path) -> tuple[int, dict, dict[str, np.ndarray]]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read model {path}: {exc}") from exc
    return decode(data)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
