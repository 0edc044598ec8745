"""Versioned flat binary container for named arrays plus a JSON metadata blob.

Layout (all integers little-endian):

    magic "MDCK" | u32 version | u32 entry count
    per entry: u16 name length | name utf-8 | u8 dtype length | dtype str
               | u8 ndim | u32 dims... | raw C-order array bytes
    trailer:   u64 metadata length | canonical JSON utf-8

Entries are written in sorted-name order and numbers are stored verbatim,
so identical state always produces identical bytes and round-trips are
bit-exact. No timestamps anywhere.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import DataError

MAGIC = b"MDCK"
VERSION = 1


def save(path: str, arrays: "dict[str, np.ndarray]", meta: "dict | None" = None):
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name])
            dtype = arr.dtype.newbyteorder("<")
            arr = arr.astype(dtype, copy=False)
            name_b = name.encode("utf-8")
            dtype_b = dtype.str.encode("ascii")
            f.write(struct.pack("<H", len(name_b)))
            f.write(name_b)
            f.write(struct.pack("<B", len(dtype_b)))
            f.write(dtype_b)
            f.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<I", d))
            f.write(arr.tobytes(order="C"))
        meta_b = json.dumps(meta or {}, sort_keys=True, separators=(",", ":")).encode("utf-8")
        f.write(struct.pack("<Q", len(meta_b)))
        f.write(meta_b)


def load(path: str) -> "tuple[dict[str, np.ndarray], dict]":
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise DataError(f"{path}: not a memdiff checkpoint")
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        (count,) = struct.unpack("<I", f.read(4))
        arrays: "dict[str, np.ndarray]" = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode("utf-8")
            (dtype_len,) = struct.unpack("<B", f.read(1))
            dtype = np.dtype(f.read(dtype_len).decode("ascii"))
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = tuple(struct.unpack("<I", f.read(4))[0] for _ in range(ndim))
            n_bytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64)) if ndim else dtype.itemsize
            raw = f.read(n_bytes)
            arrays[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
        (meta_len,) = struct.unpack("<Q", f.read(8))
        meta = json.loads(f.read(meta_len).decode("utf-8"))
    return arrays, meta
