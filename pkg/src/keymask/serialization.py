"""Versioned binary container used by all checkpoint files.

Layout (little endian):

    magic          4 bytes
    format_version uint32
    header_size    uint64, followed by that many bytes of UTF-8 JSON
    blob_count     uint32
    per blob:
        name_size  uint16, name bytes (UTF-8)
        dtype_size uint8,  numpy dtype string (e.g. "<f4")
        ndim       uint8,  ndim * uint64 dims
        data_size  uint64, raw array bytes (C order)

Any structural problem while reading (bad magic, unknown version, short
read) raises :class:`~keymask.errors.UnsupportedCheckpoint`.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .errors import UnsupportedCheckpoint

_U8 = struct.Struct("<B")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


def write_container(
    path: str | Path,
    magic: bytes,
    version: int,
    header: dict,
    blobs: dict[str, np.ndarray],
) -> None:
    if len(magic) != 4:
        raise ValueError("magic must be exactly 4 bytes")
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(magic)
        f.write(_U32.pack(version))
        f.write(_U64.pack(len(header_bytes)))
        f.write(header_bytes)
        f.write(_U32.pack(len(blobs)))
        for name, array in blobs.items():
            array = np.ascontiguousarray(array)
            name_b = name.encode("utf-8")
            dtype_b = array.dtype.str.encode("ascii")
            f.write(_U16.pack(len(name_b)))
            f.write(name_b)
            f.write(_U8.pack(len(dtype_b)))
            f.write(dtype_b)
            f.write(_U8.pack(array.ndim))
            for dim in array.shape:
                f.write(_U64.pack(dim))
            raw = array.tobytes()
            f.write(_U64.pack(len(raw)))
            f.write(raw)


def read_container(
    path: str | Path,
    magic: bytes,
    version: int,
) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a container, validating magic and format version."""
    path = Path(path)
    if not path.exists():
        raise UnsupportedCheckpoint(f"checkpoint file not found: {path}")
    try:
        with open(path, "rb") as f:
            got_magic = _read_exact(f, 4)
            if got_magic != magic:
                raise UnsupportedCheckpoint(
                    f"{path}: bad magic {got_magic!r}, expected {magic!r}"
                )
            (got_version,) = _U32.unpack(_read_exact(f, 4))
            if got_version != version:
                raise UnsupportedCheckpoint(
                    f"{path}: format version {got_version}, expected {version}"
                )
            (header_size,) = _U64.unpack(_read_exact(f, 8))
            header = json.loads(_read_exact(f, header_size).decode("utf-8"))
            (blob_count,) = _U32.unpack(_read_exact(f, 4))
            blobs: dict[str, np.ndarray] = {}
            for _ in range(blob_count):
                (name_size,) = _U16.unpack(_read_exact(f, 2))
                name = _read_exact(f, name_size).decode("utf-8")
                (dtype_size,) = _U8.unpack(_read_exact(f, 1))
                dtype = np.dtype(_read_exact(f, dtype_size).decode("ascii"))
                (ndim,) = _U8.unpack(_read_exact(f, 1))
                shape = tuple(
                    _U64.unpack(_read_exact(f, 8))[0] for _ in range(ndim)
                )
                (data_size,) = _U64.unpack(_read_exact(f, 8))
                raw = _read_exact(f, data_size)
                blobs[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    except UnsupportedCheckpoint:
        raise
    except (OSError, ValueError, json.JSONDecodeError, struct.error) as exc:
        raise UnsupportedCheckpoint(f"{path}: {exc}") from exc
    return header, blobs


def _read_exact(f: BinaryIO, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise UnsupportedCheckpoint("unexpected end of file")
    return data
