"""Versioned binary checkpoint format.

Layout (all integers little-endian):

    magic   4 bytes  "CSKW"
    version u16      currently 1
    record* until EOF:
        name_len u16
        name     UTF-8, name_len bytes
        rank     u8
        dims     rank x u32
        payload  prod(dims) x f64

Rank 0 is a scalar with a single f64 payload. Loading into a model goes through
``ParamStore.load_state``, which validates every name and shape, so a truncated
or mismatched file can never half-apply.
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import CheckpointError

__all__ = ["MAGIC", "VERSION", "save_state", "load_state"]

MAGIC = b"CSKW"
VERSION = 1


def save_state(path, state):
    """Write a name -> ndarray mapping in its iteration order."""
    chunks = [MAGIC, struct.pack("<H", VERSION)]
    for name, array in state.items():
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise CheckpointError(f"name too long to serialize: {name!r}")
        arr = np.asarray(array, dtype=np.float64)  # tobytes handles layout; keeps rank 0
        if arr.ndim > 0xFF:
            raise CheckpointError(f"rank too large to serialize: {name!r} ({arr.ndim})")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            chunks.append(struct.pack("<I", dim))
        chunks.append(arr.tobytes(order="C"))
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_state(path):
    """Read a checkpoint back into a name -> ndarray mapping (insertion order)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 6:
        raise CheckpointError(f"file too short to be a checkpoint: {path}")
    if blob[:4] != MAGIC:
        raise CheckpointError(
            f"bad checkpoint magic in {path}: expected {MAGIC!r}, got {blob[:4]!r}"
        )
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} in {path}")
    state = {}
    offset = 6
    total = len(blob)

    def need(n, what):
        if offset + n > total:
            raise CheckpointError(f"truncated checkpoint {path}: unexpected EOF in {what}")

    while offset < total:
        need(2, "record header")
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        need(name_len, "record name")
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        if name in state:
            raise CheckpointError(f"duplicate entry {name!r} in {path}")
        need(1, f"rank of {name!r}")
        rank = blob[offset]
        offset += 1
        need(4 * rank, f"dims of {name!r}")
        dims = struct.unpack_from(f"<{rank}I", blob, offset) if rank else ()
        offset += 4 * rank
        count = 1
        for d in dims:
            count *= d
        need(8 * count, f"payload of {name!r}")
        payload = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        offset += 8 * count
        state[name] = payload.reshape(dims).astype(np.float64)
    return state
