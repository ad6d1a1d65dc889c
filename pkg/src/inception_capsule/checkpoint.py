"""Binary checkpoint files for named float tensors.

Layout, all little-endian::

    b"ICAP" | version u16 | entry count u32
    per entry: name length u16 | UTF-8 name | rank u8 | dims u32 * rank | float32 * prod(dims)

Values are stored as float32 and widened back to float64 on load.
"""

from __future__ import annotations

import os
import struct
from typing import Mapping

import numpy as np

from .errors import (
    CheckpointError,
    CheckpointLayoutError,
    CheckpointMagicError,
    CheckpointTruncatedError,
    CheckpointVersionError,
)

MAGIC = b"ICAP"
VERSION = 1


def encode_checkpoint(params: Mapping[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(params))]
    for name, value in params.items():
        arr = np.asarray(value, dtype="<f4")
        raw = name.encode("utf-8")
        if not raw or len(raw) > 0xFFFF:
            raise CheckpointLayoutError(f"parameter name length out of range: {name!r}")
        if arr.ndim > 0xFF or any(d == 0 for d in arr.shape):
            raise CheckpointLayoutError(f"{name}: unsupported shape {arr.shape}")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(chunks)


def decode_checkpoint(buf: bytes) -> dict[str, np.ndarray]:
    view = memoryview(buf)
    pos = 0

    def take(n: int, what: str) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointTruncatedError(f"file ends inside {what} (offset {pos}, need {n} bytes)")
        out = view[pos:pos + n]
        pos += n
        return out

    if len(view) >= 4 and bytes(view[:4]) != MAGIC:
        raise CheckpointMagicError(f"bad magic {bytes(view[:4])!r}")
    if bytes(take(4, "magic")) != MAGIC:
        raise CheckpointMagicError("bad magic")
    (version,) = struct.unpack("<H", take(2, "version"))
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, expected {VERSION}")
    (count,) = struct.unpack("<I", take(4, "entry count"))
    params: dict[str, np.ndarray] = {}
    for k in range(count):
        (nlen,) = struct.unpack("<H", take(2, f"entry {k} name length"))
        try:
            name = bytes(take(nlen, f"entry {k} name")).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointLayoutError(f"entry {k}: name is not UTF-8") from e
        if not name or name in params:
            raise CheckpointLayoutError(f"entry {k}: empty or duplicate name {name!r}")
        (rank,) = struct.unpack("<B", take(1, f"{name} rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"{name} dims"))
        if any(d == 0 for d in dims):
            raise CheckpointLayoutError(f"{name}: zero-sized dimension in {dims}")
        n = int(np.prod(dims, dtype=np.int64))
        data = np.frombuffer(take(4 * n, f"{name} data"), dtype="<f4")
        params[name] = data.astype(np.float64).reshape(dims)
    if pos != len(view):
        raise CheckpointLayoutError(f"{len(view) - pos} bytes beyond the declared shape table")
    return params


def save_checkpoint(params: Mapping[str, np.ndarray], path: str | os.PathLike) -> None:
    data = encode_checkpoint(params)
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {path}: {e}") from e


def load_checkpoint(path: str | os.PathLike) -> dict[str, np.ndarray]:
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    return decode_checkpoint(buf)
