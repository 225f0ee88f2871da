"""DFMR binary container: a flat list of named float64/complex128 arrays.

Layout (all integers little-endian)::

    b"DFMR"                 magic
    u16                     format version (1)
    u32                     array count
    per array:
        u32 + bytes         name length, UTF-8 name
        u8                  dtype code (1 = f64, 2 = c128)
        u8                  ndim
        u64 * ndim          shape
        payload             row-major little-endian values
"""

import struct
from pathlib import Path

import numpy as np

MAGIC = b"DFMR"
VERSION = 1
DTYPES = {1: np.dtype("<f8"), 2: np.dtype("<c16")}
CODES = {np.dtype("<f8"): 1, np.dtype("<c16"): 2}


class ContainerError(ValueError):
    pass


def _code(arr):
    if arr.dtype.kind == "c":
        return 2, arr.astype("<c16", copy=False)
    if arr.dtype.kind in "fiub":
        return 1, arr.astype("<f8", copy=False)
    raise ContainerError(f"cannot store dtype {arr.dtype}")


def dumps(arrays):
    """Serialise a mapping of name -> array to bytes (order preserved)."""
    parts = [MAGIC, struct.pack("<HI", VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        code, arr = _code(arr)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def loads(buf):
    buf = memoryview(buf)
    if bytes(buf[:4]) != MAGIC:
        raise ContainerError("not a DFMR container (bad magic)")
    version, count = struct.unpack_from("<HI", buf, 4)
    if version != VERSION:
        raise ContainerError(f"unsupported DFMR version {version}")
    pos = 10
    out = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = bytes(buf[pos:pos + n]).decode("utf-8")
            pos += n
            code, ndim = struct.unpack_from("<BB", buf, pos)
            pos += 2
            if code not in DTYPES:
                raise ContainerError(f"array {name!r}: unknown dtype code {code}")
            shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
            pos += 8 * ndim
            dt = DTYPES[code]
            size = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if pos + size > len(buf):
                raise ContainerError(f"array {name!r}: truncated payload")
            out[name] = np.frombuffer(buf[pos:pos + size], dtype=dt).reshape(shape).copy()
            pos += size
    except struct.error as exc:
        raise ContainerError(f"truncated container: {exc}") from None
    return out


def write(path, arrays):
    Path(path).write_bytes(dumps(arrays))


def read(path):
    return loads(Path(path).read_bytes())
