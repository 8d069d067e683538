"""Binary parameter checkpoints.

Layout (little-endian)::

    b"PGCK"  uint8 version
    uint32 meta_len, meta_len bytes of UTF-8 JSON (model config, may be {})
    uint32 count
    count x { uint16 name_len, name, uint32 rows, uint32 cols, rows*cols float64 }
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ParseError
from .models import ParameterSet

MAGIC = b"PGCK"
VERSION = 1


def save_checkpoint(path, params: ParameterSet, meta: dict | None = None) -> None:
    blob = bytearray(MAGIC)
    blob += struct.pack("<B", VERSION)
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
    blob += struct.pack("<I", len(meta_bytes)) + meta_bytes
    blob += struct.pack("<I", len(params))
    for name, t in params.items():
        nb = name.encode()
        rows, cols = t.shape
        blob += struct.pack("<H", len(nb)) + nb + struct.pack("<II", rows, cols)
        blob += np.ascontiguousarray(t.data, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path) -> tuple[ParameterSet, dict]:
    blob = Path(path).read_bytes()
    src = str(path)
    try:
        if blob[:4] != MAGIC:
            raise ParseError("bad magic; not a PGCK checkpoint", None, src)
        (version,) = struct.unpack_from("<B", blob, 4)
        if version != VERSION:
            raise ParseError(f"unsupported checkpoint version {version}", None, src)
        off = 5
        (mlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        meta = json.loads(blob[off : off + mlen].decode())
        off += mlen
        (count,) = struct.unpack_from("<I", blob, off)
        off += 4
        arrays = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off : off + nlen].decode()
            off += nlen
            rows, cols = struct.unpack_from("<II", blob, off)
            off += 8
            n = rows * cols
            if off + 8 * n > len(blob):
                raise ParseError(f"tensor {name!r} is truncated", None, src)
            arrays[name] = np.frombuffer(blob, "<f8", n, off).reshape(rows, cols).astype(np.float64)
            off += 8 * n
    except struct.error:
        raise ParseError("truncated checkpoint", None, src) from None
    if off != len(blob):
        raise ParseError("trailing bytes after last tensor", None, src)
    return ParameterSet.from_arrays(arrays), meta
