"""Single-file checkpoints: JSON header followed by length-prefixed tensors.

Layout::

    b"STPFCKPT"                      8-byte magic
    uint32 LE                        format version
    uint64 LE, bytes                 header length, UTF-8 JSON header
    repeated: uint64 LE, bytes       byte length, raw little-endian float64

The header lists tensors (name, shape) in the order their blocks follow.
Serialization is canonical (sorted keys, fixed separators), so
save -> load -> save reproduces the file byte for byte.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from .errors import LoadError, VersionError

MAGIC = b"STPFCKPT"
VERSION = 1


def _canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def save_checkpoint(path, header, tensors):
    """``header``: JSON-serializable dict; ``tensors``: name -> array."""
    names = list(tensors)
    head = dict(header)
    head["tensors"] = [{"name": n, "shape": list(np.shape(tensors[n]))} for n in names]
    blob = _canonical(head)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for n in names:
            raw = np.ascontiguousarray(tensors[n], dtype="<f8").tobytes()
            fh.write(struct.pack("<Q", len(raw)))
            fh.write(raw)


def load_checkpoint(path):
    """Returns (header without the tensor index, name -> float64 array)."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] != MAGIC:
        raise LoadError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", buf, 8)
    if version != VERSION:
        raise VersionError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = struct.unpack_from("<Q", buf, 12)
    pos = 20
    try:
        head = json.loads(buf[pos:pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise LoadError(f"{path}: corrupt header ({exc})") from None
    pos += hlen
    tensors = {}
    for entry in head.pop("tensors"):
        if pos + 8 > len(buf):
            raise LoadError(f"{path}: truncated before tensor {entry['name']!r}")
        (nbytes,) = struct.unpack_from("<Q", buf, pos)
        pos += 8
        shape = tuple(entry["shape"])
        if nbytes != 8 * int(np.prod(shape, dtype=np.int64)) or pos + nbytes > len(buf):
            raise LoadError(f"{path}: tensor {entry['name']!r} has inconsistent size")
        tensors[entry["name"]] = np.frombuffer(buf, dtype="<f8", count=nbytes // 8, offset=pos).reshape(shape).copy()
        pos += nbytes
    if pos != len(buf):
        raise LoadError(f"{path}: {len(buf) - pos} trailing bytes")
    return head, tensors
