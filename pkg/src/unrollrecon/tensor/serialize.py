"""URTN binary tensor container.

Layout: magic ``b"URTN"``, u16 version (1), u8 dtype code, u8 ndim, ndim x u64
extents, then the row-major little-endian payload. Dtype codes are 1 = f32,
2 = f64, 3 = complex-f32 (interleaved real/imag).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"URTN"
VERSION = 1
_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<c8")}
_BY_KIND = {np.dtype(np.float32): 1, np.dtype(np.float64): 2, np.dtype(np.complex64): 3}


class ContainerError(ValueError):
    """Malformed, truncated, or unsupported tensor container."""


def encode(arr):
    arr = np.asarray(arr)
    if arr.dtype == np.bool_:
        arr = arr.astype(np.float32)
    code = _BY_KIND.get(np.dtype(arr.dtype).newbyteorder("="))
    if code is None:
        raise ContainerError(f"unsupported dtype {arr.dtype}")
    head = MAGIC + struct.pack("<HBB", VERSION, code, arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=_CODES[code]).tobytes()


def decode(buf, source="<bytes>"):
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise ContainerError(f"{source}: bad magic bytes")
    version, code, ndim = struct.unpack_from("<HBB", buf, 4)
    if version != VERSION:
        raise ContainerError(f"{source}: unsupported version {version}")
    if code not in _CODES:
        raise ContainerError(f"{source}: unknown dtype code {code}")
    off = 8 + 8 * ndim
    if len(buf) < off:
        raise ContainerError(f"{source}: truncated header")
    shape = struct.unpack_from(f"<{ndim}Q", buf, 8)
    dt = _CODES[code]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
    if len(buf) - off != nbytes:
        raise ContainerError(f"{source}: payload is {len(buf) - off} bytes, expected {nbytes}")
    arr = np.frombuffer(buf, dtype=dt, offset=off).reshape(shape)
    return arr.astype(dt.newbyteorder("="))


def save(path, arr):
    Path(path).write_bytes(encode(arr))


def load(path):
    path = Path(path)
    if not path.exists():
        raise ContainerError(f"{path}: no such file")
    return decode(path.read_bytes(), source=str(path))
