"""Array containers: a shape-prefixed little-endian binary format and base64 JSON."""

from __future__ import annotations

import base64
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

CONTAINER_MAGIC = b"CDXA\x01"


def pack_arrays(arrays):
    """Serialise an ordered mapping of name -> array.

    Layout per array: u16 name length, utf-8 name, u8 kind ('f' float64,
    'i' int64, 'b' bool), u32 ndim, u64 x ndim shape, raw little-endian data.
    """
    out = [CONTAINER_MAGIC, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype == bool:
            kind, data = b"b", arr.astype("u1")
        elif arr.dtype.kind in "iu":
            kind, data = b"i", arr.astype("<i8")
        else:
            kind, data = b"f", arr.astype("<f8")
        encoded = name.encode()
        out.append(struct.pack("<H", len(encoded)) + encoded + kind)
        out.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(np.ascontiguousarray(data).tobytes())
    return b"".join(out)


def unpack_arrays(blob):
    if not blob.startswith(CONTAINER_MAGIC):
        raise ValueError("not a cdx array container")
    pos = len(CONTAINER_MAGIC)
    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos : pos + nlen].decode()
        pos += nlen
        kind = blob[pos : pos + 1]
        pos += 1
        (ndim,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}Q", blob, pos)
        pos += 8 * ndim
        dtype = {b"b": np.dtype("u1"), b"i": np.dtype("<i8"), b"f": np.dtype("<f8")}[kind]
        n = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(blob, dtype=dtype, count=n, offset=pos).reshape(shape).copy()
        pos += n * dtype.itemsize
        arrays[name] = arr.astype(bool) if kind == b"b" else arr
    return arrays


def write_arrays(path, arrays):
    Path(path).write_bytes(pack_arrays(arrays))


def read_arrays(path):
    return unpack_arrays(Path(path).read_bytes())


def encode_array(arr):
    arr = np.asarray(arr, dtype="<f8")
    return {"shape": list(arr.shape), "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def decode_array(obj):
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(obj["shape"]).copy()


def dumps(obj):
    """Canonical JSON (sorted keys, fixed separators) for byte-stable files."""
    return json.dumps(obj, sort_keys=True, indent=1, separators=(",", ": "))


def sha256_bytes(data):
    return hashlib.sha256(data).hexdigest()


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
