"""Binary checkpoint format.

Layout (little-endian)::

    b"CXVCKPT1"
    u32 tensor count
    per tensor: u16 name length, UTF-8 name, u8 dtype code, u8 rank,
                rank x u32 dims, raw data

Dtype codes: 0 float32, 1 float64, 2 int64. Optimizer state uses names
prefixed ``opt.``; run bookkeeping uses ``run.``.
"""

from __future__ import annotations

import io
import os
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"CXVCKPT1"
_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1, np.dtype("<i8"): 2}
_DTYPES = {v: k for k, v in _CODES.items()}


def encode(tensors: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in _CODES:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<BB", _CODES[dt], arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype=dt).tobytes())
    return buf.getvalue()


def decode(data: bytes) -> dict[str, np.ndarray]:
    if data[:8] != MAGIC:
        raise CheckpointError("not a CXV checkpoint (bad magic bytes)")
    try:
        (count,) = struct.unpack_from("<I", data, 8)
        off = 12
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off:off + nlen].decode("utf-8")
            off += nlen
            code, rank = struct.unpack_from("<BB", data, off)
            off += 2
            dims = struct.unpack_from(f"<{rank}I", data, off)
            off += 4 * rank
            dt = _DTYPES[code]
            nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
            if off + nbytes > len(data):
                raise CheckpointError(f"truncated checkpoint in tensor {name!r}")
            out[name] = np.frombuffer(data, dtype=dt, count=nbytes // dt.itemsize, offset=off).reshape(dims).copy()
            off += nbytes
    except (struct.error, KeyError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from None
    return out


def save_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_bytes(encode(tensors))
        os.replace(tmp, path)
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc.strerror}") from exc


def load_checkpoint(path) -> dict[str, np.ndarray]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from exc
    return decode(data)
