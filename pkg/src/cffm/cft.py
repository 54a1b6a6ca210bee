"""CFT1 binary tensor files.

Layout: ``b"CFT1"``, one dtype byte (0=f32, 1=f64, 2=u8), one rank byte,
rank little-endian u32 extents, then little-endian row-major data.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ContractError

MAGIC = b"CFT1"
_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1")}
_KINDS = {("f", 4): 0, ("f", 8): 1, ("u", 1): 2}


def encode(arr) -> bytes:
    arr = np.asarray(getattr(arr, "data", arr))
    code = _KINDS.get((arr.dtype.kind, arr.dtype.itemsize))
    if code is None:
        raise ContractError(f"CFT1 cannot store dtype {arr.dtype}")
    if arr.ndim > 255:
        raise ContractError("CFT1 rank is limited to 255")
    header = MAGIC + struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_CODES[code]).tobytes()


def decode(buf: bytes) -> np.ndarray:
    if len(buf) < 6 or buf[:4] != MAGIC:
        raise ContractError("not a CFT1 stream (bad magic)")
    code, rank = struct.unpack_from("<BB", buf, 4)
    if code not in _CODES:
        raise ContractError(f"unknown CFT1 dtype code {code}")
    shape = struct.unpack_from(f"<{rank}I", buf, 6)
    offset = 6 + 4 * rank
    dt = _CODES[code]
    count = int(np.prod(shape, dtype=np.int64))
    if len(buf) - offset != count * dt.itemsize:
        raise ContractError(f"CFT1 payload size mismatch for shape {shape}")
    return np.frombuffer(buf, dtype=dt, count=count, offset=offset).reshape(shape).copy()


def save(path, arr):
    Path(path).write_bytes(encode(arr))


def load(path) -> np.ndarray:
    return decode(Path(path).read_bytes())
