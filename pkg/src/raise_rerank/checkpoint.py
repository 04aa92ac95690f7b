"""RAISE1 checkpoint container.

Layout (all integers little-endian)::

    b"RAISE1" | u32 version | u32 d, n, t, b, l_u, l_i
    repeated until EOF:
        u16 name_len | name (utf-8) | u32 rows | u32 cols | rows*cols float32

Tensors are written in the order given; reading keeps file order.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import FormatError

MAGIC = b"RAISE1"
VERSION = 1
HEADER_FIELDS = ("d", "n", "t", "b", "l_u", "l_i")


def save_checkpoint(path, header: dict, tensors: Iterable[tuple[str, np.ndarray]]) -> None:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    parts.append(struct.pack("<6I", *(int(header[k]) for k in HEADER_FIELDS)))
    for name, value in tensors:
        value = np.asarray(value)
        if value.ndim != 2:
            raise FormatError(f"tensor {name} must be 2-D, got {value.shape}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<II", *value.shape))
        parts.append(np.ascontiguousarray(value, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    blob = Path(path).read_bytes()
    if blob[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: not a RAISE1 checkpoint")
    offset = len(MAGIC)
    if len(blob) < offset + 28:
        raise FormatError(f"{path}: truncated header")
    (version,) = struct.unpack_from("<I", blob, offset)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    values = struct.unpack_from("<6I", blob, offset + 4)
    header = dict(zip(HEADER_FIELDS, values))
    header["version"] = version
    offset += 28
    tensors: dict[str, np.ndarray] = {}
    while offset < len(blob):
        try:
            (name_len,) = struct.unpack_from("<H", blob, offset)
            name = blob[offset + 2 : offset + 2 + name_len].decode("utf-8")
            offset += 2 + name_len
            rows, cols = struct.unpack_from("<II", blob, offset)
            offset += 8
        except (struct.error, UnicodeDecodeError):
            raise FormatError(f"{path}: corrupt section header at offset {offset}") from None
        size = rows * cols * 4
        if offset + size > len(blob):
            raise FormatError(f"{path}: truncated tensor {name!r} at offset {offset}")
        tensors[name] = np.frombuffer(blob, dtype="<f4", count=rows * cols, offset=offset).astype(np.float64).reshape(rows, cols)
        offset += size
    return header, tensors
