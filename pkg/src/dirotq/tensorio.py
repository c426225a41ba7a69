"""Self-describing binary tensor files.

Layout, all little-endian:

    magic   4 bytes  b"DRTQ"
    version u16      format version, currently 1
    dtype   u8       0 = float32, 1 = float64
    ndim    u8
    shape   ndim x u64
    data    row-major scalars

Integer payloads (quantizer codes) are stored as float64, which is exact for
the small code ranges involved. Files are validated on read: bad magic,
unknown version or dtype, truncated payloads and non-finite values are all
rejected.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"DRTQ"
VERSION = 1

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES_BY_KIND = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


@dataclass
class TensorFile:
    """In-memory image of one tensor file."""

    dtype_code: int
    shape: tuple[int, ...]
    data: np.ndarray

    def write(self, path) -> None:
        write_tensor(path, self.data, dtype_code=self.dtype_code)

    @classmethod
    def read(cls, path) -> "TensorFile":
        arr, code = _read(path)
        return cls(dtype_code=code, shape=arr.shape, data=arr)


def write_tensor(path, array, dtype_code: int | None = None) -> None:
    """Write ``array`` to ``path`` in the DRTQ layout."""
    a = np.asarray(array)
    if dtype_code is None:
        dtype_code = _CODES_BY_KIND.get(a.dtype, 1)
    if dtype_code not in _DTYPE_CODES:
        raise ValueError(f"unsupported dtype code {dtype_code}")
    if a.ndim < 1 or a.ndim > 255:
        raise ValueError(f"ndim {a.ndim} out of range for the format")
    a = np.ascontiguousarray(a, dtype=_DTYPE_CODES[dtype_code])
    header = MAGIC + struct.pack("<HBB", VERSION, dtype_code, a.ndim)
    header += struct.pack(f"<{a.ndim}Q", *a.shape)
    Path(path).write_bytes(header + a.tobytes())


def read_tensor(path) -> np.ndarray:
    """Read a DRTQ tensor file, returning the array in its stored dtype."""
    arr, _ = _read(path)
    return arr


def _read(path):
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a DRTQ tensor file")
    version, dtype_code, ndim = struct.unpack_from("<HBB", raw, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    if dtype_code not in _DTYPE_CODES:
        raise ValueError(f"{path}: unknown dtype code {dtype_code}")
    offset = 8
    if len(raw) < offset + 8 * ndim:
        raise ValueError(f"{path}: truncated header")
    shape = struct.unpack_from(f"<{ndim}Q", raw, offset)
    offset += 8 * ndim
    dtype = _DTYPE_CODES[dtype_code]
    count = 1
    for dim in shape:
        count *= dim
    expected = offset + count * dtype.itemsize
    if len(raw) != expected:
        raise ValueError(f"{path}: payload is {len(raw) - offset} bytes, expected {expected - offset}")
    arr = np.frombuffer(raw, dtype=dtype, count=count, offset=offset).reshape(shape)
    if arr.size and not np.isfinite(arr).all():
        raise ValueError(f"{path}: payload contains non-finite values")
    return arr.copy(), dtype_code
