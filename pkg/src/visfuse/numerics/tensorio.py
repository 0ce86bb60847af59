"""Raw tensor dump: ``b"VVTT"``, u32 rank, u32 dims, then little-endian f64."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import DataIOError

MAGIC = b"VVTT"


def dumps(arr) -> bytes:
    a = np.asarray(arr, dtype="<f8", order="C")
    head = MAGIC + struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return head + a.tobytes()


def loads(buf: bytes) -> np.ndarray:
    if buf[:4] != MAGIC:
        raise DataIOError("not a tensor dump (bad magic)")
    try:
        (rank,) = struct.unpack_from("<I", buf, 4)
        dims = struct.unpack_from(f"<{rank}I", buf, 8)
    except struct.error as exc:
        raise DataIOError(f"tensor dump header truncated: {exc}") from exc
    off = 8 + 4 * rank
    n = int(np.prod(dims)) if rank else 1
    if len(buf) != off + 8 * n:
        raise DataIOError(f"tensor dump truncated: expected {off + 8 * n} bytes, got {len(buf)}")
    return np.frombuffer(buf, dtype="<f8", count=n, offset=off).reshape(dims).astype(np.float64)


def save(path, arr) -> None:
    try:
        Path(path).write_bytes(dumps(arr))
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc


def load(path) -> np.ndarray:
    try:
        return loads(Path(path).read_bytes())
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc
