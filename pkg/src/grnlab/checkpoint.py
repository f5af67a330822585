"""GRNCKPT1 checkpoint container.

Layout: the magic string "GRNCKPT1" (8 ASCII bytes), one version byte
(currently 1), then one record per parameter in registration order:

    u32 LE   name length
    bytes    UTF-8 name
    u8       dtype code (1 = float64, 2 = float32)
    u8       rank
    u64 LE   per-axis extents (rank of them)
    bytes    raw little-endian values, row-major

Round-trips are byte-exact: save -> load -> save reproduces the file.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"GRNCKPT1"
VERSION = 1

_DTYPE_CODES = {1: np.dtype("<f8"), 2: np.dtype("<f4")}
_CODE_FOR_KIND = {np.dtype("float64"): 1, np.dtype("float32"): 2}


class CheckpointError(ValueError):
    """The file is not a well-formed GRNCKPT1 container."""


def save_checkpoint(path, values: dict[str, np.ndarray]) -> None:
    """Write parameters in the given (insertion) order."""
    out = bytearray()
    out += MAGIC
    out += bytes([VERSION])
    for name, value in values.items():
        arr = np.ascontiguousarray(value)
        code = _CODE_FOR_KIND.get(arr.dtype)
        if code is None:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
        encoded = name.encode("utf-8")
        out += struct.pack("<I", len(encoded))
        out += encoded
        out += bytes([code, arr.ndim])
        for extent in arr.shape:
            out += struct.pack("<Q", extent)
        out += arr.astype(_DTYPE_CODES[code], copy=False).tobytes()
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read parameters back, preserving record order."""
    blob = Path(path).read_bytes()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:8]!r}")
    if len(blob) < 9 or blob[8] != VERSION:
        raise CheckpointError(f"{path}: unsupported version")
    pos = 9
    values: dict[str, np.ndarray] = {}
    while pos < len(blob):
        if pos + 4 > len(blob):
            raise CheckpointError(f"{path}: truncated record header")
        (name_len,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        code, rank = blob[pos], blob[pos + 1]
        pos += 2
        if code not in _DTYPE_CODES:
            raise CheckpointError(f"{path}: unknown dtype code {code}")
        shape = []
        for _ in range(rank):
            (extent,) = struct.unpack_from("<Q", blob, pos)
            shape.append(extent)
            pos += 8
        dtype = _DTYPE_CODES[code]
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * dtype.itemsize
        if pos + nbytes > len(blob):
            raise CheckpointError(f"{path}: truncated data for {name}")
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=pos)
        pos += nbytes
        if name in values:
            raise CheckpointError(f"{path}: duplicate parameter {name}")
        values[name] = arr.reshape(shape).copy()
    return values
