"""LDAGTNSR binary tensor interchange format.

Little-endian layout:

    magic   8 bytes  b"LDAGTNSR"
    version u32      1
    dtype   u8       0 = float32
    rank    u8
    reserved u16     0
    extents rank x u64
    mlen    u32      metadata byte length
    meta    mlen bytes of UTF-8 JSON ({kind, role?, prompt?, source, class_id?, ...})
    payload product(extents) float32 values, row-major
"""

import json
import os
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"LDAGTNSR"
VERSION = 1
DTYPE_F32 = 0

_HEADER = struct.Struct("<8sIBBH")

MAX_RANK = 8


def write_tensor(path, array: np.ndarray, metadata: dict) -> None:
    """Serialize one float32 tensor plus its metadata; atomic write-then-rename."""
    arr = np.asarray(array, dtype=np.float32)
    if not arr.flags["C_CONTIGUOUS"]:  # ascontiguousarray would promote 0-d to 1-d
        arr = np.ascontiguousarray(arr)
    meta = json.dumps(metadata, sort_keys=True).encode("utf-8")
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, DTYPE_F32, arr.ndim, 0))
        for extent in arr.shape:
            fh.write(struct.pack("<Q", extent))
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)
        fh.write(arr.tobytes(order="C"))
    os.replace(tmp, path)


def read_tensor(path):
    """Parse one tensor file; returns (float32 array, metadata dict).

    Malformed input raises FormatError carrying the byte offset of the
    first inconsistency.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise FormatError(f"file too short for header ({len(blob)} bytes)", offset=len(blob))
    magic, version, dtype, rank, reserved = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=8)
    if dtype != DTYPE_F32:
        raise FormatError(f"unsupported dtype code {dtype}", offset=12)
    if rank > MAX_RANK:
        raise FormatError(f"rank {rank} exceeds maximum {MAX_RANK}", offset=13)
    if reserved != 0:
        raise FormatError(f"reserved field is {reserved}, expected 0", offset=14)
    pos = _HEADER.size
    if len(blob) < pos + 8 * rank + 4:
        raise FormatError("truncated extents", offset=len(blob))
    extents = struct.unpack_from(f"<{rank}Q", blob, pos)
    pos += 8 * rank
    (mlen,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    if len(blob) < pos + mlen:
        raise FormatError(
            f"truncated metadata: expected {mlen} bytes, have {len(blob) - pos}", offset=len(blob))
    try:
        metadata = json.loads(blob[pos:pos + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"metadata is not valid JSON: {e}", offset=pos) from e
    pos += mlen
    count = 1
    for extent in extents:
        count *= extent
    expected = count * 4
    actual = len(blob) - pos
    if actual != expected:
        raise FormatError(
            f"payload length mismatch: expected {expected} bytes, actual {actual}", offset=pos)
    array = np.frombuffer(blob, dtype="<f4", count=count, offset=pos).reshape(extents)
    return array.copy(), metadata
