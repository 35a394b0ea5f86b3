"""Deterministic on-disk containers and digests.

Binary layout::

    magic (8 bytes) | u32 little-endian header length | JSON header | arrays

The header lists ``arrays`` as ``[name, dtype, shape]`` in payload order; each
array is stored C-contiguous and little-endian. The JSON is written with
sorted keys and no timestamps so identical content gives identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np


class StoreError(ValueError):
    pass


def dumps_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)


def write_container(path, magic: bytes, header: dict, arrays: dict[str, np.ndarray]) -> Path:
    if len(magic) != 8:
        raise ValueError("magic must be 8 bytes")
    path = Path(path)
    specs = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        specs.append([name, le.dtype.str, list(arr.shape)])
        blobs.append(le.tobytes())
    head = dumps_json({**header, "arrays": specs}).encode()
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for b in blobs:
            fh.write(b)
    return path


def read_container(path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:8] != magic:
        raise StoreError(f"{path}: expected a {magic.decode(errors='replace')} file")
    (n,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12 : 12 + n])
    arrays = {}
    pos = 12 + n
    for name, dtype, shape in header.pop("arrays"):
        dt = np.dtype(dtype)
        count = int(np.prod(shape)) if shape else 1
        size = count * dt.itemsize
        arrays[name] = np.frombuffer(data, dtype=dt, count=count, offset=pos).reshape(shape).copy()
        pos += size
    if pos != len(data):
        raise StoreError(f"{path}: trailing or missing payload bytes")
    return header, arrays


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()
