"""Binary parameter checkpoint I/O.

Layout: magic ``VFCK``, version u32, parameter count u32, then per
parameter: name length u16, UTF-8 name, rank u8, dims as u32s, raw
little-endian float32 values.  Round-trips are bit-exact for float32
parameters.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError

MAGIC = b"VFCK"
VERSION = 1


def save_checkpoint(path, params):
    """Write ``params`` (name -> Tensor or ndarray) to ``path``."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(params)))
        for name, value in params.items():
            arr = np.asarray(getattr(value, "data", value), dtype="<f4")
            enc = name.encode("utf-8")
            f.write(struct.pack("<H", len(enc)))
            f.write(enc)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr).tobytes())


def load_checkpoint(path):
    """Read a checkpoint, returning an ordered name -> float32 ndarray dict."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    params = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", raw, off)
            off += 2
            name = raw[off : off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<B", raw, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", raw, off)
            off += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(raw, dtype="<f4", count=n, offset=off).reshape(dims)
            off += 4 * n
            params[name] = arr.copy()
    except (struct.error, ValueError) as exc:
        raise FormatError(f"{path}: truncated or corrupt checkpoint") from exc
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes")
    return params
