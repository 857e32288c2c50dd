"""Binary container used for grids, matrices, trajectories, datasets, models.

Layout (all integers little-endian):

    magic     6 bytes   b"ECGLI\\0"
    version   u32       format version (currently 1)
    kind      16 bytes  ascii tag, NUL padded ("grid", "dataset", ...)
    n_arrays  u32
    per array:
        name_len u16, name utf-8
        dtype    u8   (0=float64, 1=int32, 2=int64, 3=uint8)
        ndim     u8
        shape    ndim x u64
        data     raw little-endian bytes
    crc32     u32 over everything after the magic string

Only float64 and 32/64-bit integer payloads are used so files are easy to
inspect from any language. Loading validates magic, version, the declared
shapes against the byte stream, and the trailing checksum.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import CorruptDataError

MAGIC = b"ECGLI\0"
VERSION = 1

_DTYPES = {0: "<f8", 1: "<i4", 2: "<i8", 3: "|u1"}
_DTYPE_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}


def write_arrays(path: str | Path, kind: str, arrays: dict[str, np.ndarray]) -> None:
    """Atomically write named arrays to ``path`` in the container format."""
    body = bytearray()
    body += struct.pack("<I", VERSION)
    body += kind.encode("ascii")[:16].ljust(16, b"\0")
    body += struct.pack("<I", len(arrays))
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _DTYPE_CODES:
            if np.issubdtype(arr.dtype, np.floating):
                arr = arr.astype("<f8")
            elif np.issubdtype(arr.dtype, np.integer):
                arr = arr.astype("<i8")
            else:
                raise TypeError(f"unsupported dtype {arr.dtype} for array {name!r}")
        code = _DTYPE_CODES[np.dtype(arr.dtype.str.replace(">", "<"))]
        name_b = name.encode("utf-8")
        body += struct.pack("<H", len(name_b)) + name_b
        body += struct.pack("<BB", code, arr.ndim)
        body += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        body += arr.astype(_DTYPES[code]).tobytes()
    body += struct.pack("<I", zlib.crc32(bytes(body)) & 0xFFFFFFFF)

    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(MAGIC + bytes(body))
    tmp.replace(path)


def read_arrays(path: str | Path, expect_kind: str | None = None) -> dict[str, np.ndarray]:
    """Read a container file back into a dict of arrays, verifying integrity."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CorruptDataError(f"cannot read {path}: {exc}") from exc
    if len(raw) < len(MAGIC) + 8 or raw[: len(MAGIC)] != MAGIC:
        raise CorruptDataError(f"{path}: not an ecgli container (bad magic)")
    body, (crc_stored,) = raw[len(MAGIC) : -4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc_stored:
        raise CorruptDataError(f"{path}: checksum mismatch")

    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(body):
            raise CorruptDataError(f"{path}: truncated container")
        chunk = body[off : off + n]
        off += n
        return chunk

    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise CorruptDataError(f"{path}: unsupported container version {version}")
    kind = take(16).rstrip(b"\0").decode("ascii")
    if expect_kind is not None and kind != expect_kind:
        raise CorruptDataError(f"{path}: expected kind {expect_kind!r}, found {kind!r}")
    (n_arrays,) = struct.unpack("<I", take(4))

    out: dict[str, np.ndarray] = {}
    for _ in range(n_arrays):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        code, ndim = struct.unpack("<BB", take(2))
        if code not in _DTYPES:
            raise CorruptDataError(f"{path}: unknown dtype code {code}")
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        dtype = np.dtype(_DTYPES[code])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        out[name] = np.frombuffer(take(nbytes), dtype=dtype).reshape(shape).copy()
    if off != len(body):
        raise CorruptDataError(f"{path}: trailing bytes after declared arrays")
    return out


def container_kind(path: str | Path) -> str:
    """Return the kind tag of a container without loading its payload."""
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise CorruptDataError(f"{path}: not an ecgli container (bad magic)")
    return raw[len(MAGIC) + 4 : len(MAGIC) + 20].rstrip(b"\0").decode("ascii")
