"""Bit-exact binary checkpoint format for named tensor collections.

Layout (all integers little-endian):

    magic   4 bytes  "FFRG"
    version u16
    count   u32
    per tensor:
        name_len u16, name UTF-8
        ndim     u8
        dims     ndim * u32
        data     float32 little-endian, row-major
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .params import ParamSet

MAGIC = b"FFRG"
VERSION = 1


class CheckpointFormatError(ValueError):
    pass


def dumps(params: ParamSet) -> bytes:
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(params))]
    for name, t in params.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        dims = t.shape
        chunks.append(struct.pack("<B", len(dims)))
        chunks.append(struct.pack(f"<{len(dims)}I", *dims) if dims else b"")
        chunks.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    return b"".join(chunks)


def loads(blob: bytes) -> ParamSet:
    view = memoryview(blob)
    if bytes(view[:4]) != MAGIC:
        raise CheckpointFormatError(
            f"bad magic bytes {bytes(view[:4])!r}, expected {MAGIC!r}")
    version, count = struct.unpack_from("<HI", view, 4)
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    off = 10
    items: list[tuple[str, Tensor]] = []
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", view, off)
            off += 2
            name = bytes(view[off:off + name_len]).decode("utf-8")
            off += name_len
            (ndim,) = struct.unpack_from("<B", view, off)
            off += 1
            dims = struct.unpack_from(f"<{ndim}I", view, off) if ndim else ()
            off += 4 * ndim
            n = int(np.prod(dims)) if dims else 1
            data = np.frombuffer(view, dtype="<f4", count=n, offset=off).reshape(dims)
            off += 4 * n
            items.append((name, Tensor(data.copy(), requires_grad=True)))
    except (struct.error, ValueError) as e:
        raise CheckpointFormatError(f"truncated or corrupt checkpoint: {e}") from e
    if off != len(blob):
        raise CheckpointFormatError(f"{len(blob) - off} trailing bytes after tensor data")
    return ParamSet(items)


def save(path: str | Path, params: ParamSet) -> None:
    Path(path).write_bytes(dumps(params))


def load(path: str | Path) -> ParamSet:
    return loads(Path(path).read_bytes())
