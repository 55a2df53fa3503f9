"""Binary parameter container.

Layout (all integers little-endian)::

    offset  size  field
    0       4     magic b"ENSH"
    4       2     u16 format version (currently 1)
    6       4     u32 entry count N
    then N entries, each:
            4     u32 name length in bytes (k)
            k     UTF-8 name
            16    4 x u32 shape (d0, d1, d2, d3); lower-rank arrays are
                  left-padded with 1s
            8*P   P = d0*d1*d2*d3 float64 values, row-major

Entries appear in the order they were written.  Readers return 4-D arrays;
:meth:`Module.load_state_dict` reshapes them to the parameter's own shape.
"""
from __future__ import annotations

import os
import struct
from typing import Mapping

import numpy as np

MAGIC = b"ENSH"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _as4d(shape: tuple[int, ...]) -> tuple[int, int, int, int]:
    if len(shape) > 4:
        raise CheckpointError(f"rank {len(shape)} exceeds 4")
    return (1,) * (4 - len(shape)) + tuple(int(s) for s in shape)


def dumps(entries: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<HI", VERSION, len(entries))]
    for name, arr in entries.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f8")
        shape = _as4d(arr.shape)
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<4I", *shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise CheckpointError("bad magic")
    version, count = struct.unpack_from("<HI", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version}")
    pos = 10
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (k,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos:pos + k].decode("utf-8")
        pos += k
        shape = struct.unpack_from("<4I", blob, pos)
        pos += 16
        n = int(np.prod(shape))
        out[name] = np.frombuffer(blob, dtype="<f8", count=n, offset=pos).astype(np.float64).reshape(shape)
        pos += 8 * n
    if pos != len(blob):
        raise CheckpointError("trailing bytes")
    return out


def save(path: str | os.PathLike, entries: Mapping[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(entries))


def load(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return loads(fh.read())
