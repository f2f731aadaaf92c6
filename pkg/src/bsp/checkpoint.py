"""Named-tensor checkpoints.

Layout: 4-byte magic "BSPW", u32 version, u32 metadata length, UTF-8 JSON
metadata (role, config hash, step, tensor index with names and shapes), then
each tensor's little-endian float32 data in index order. Tensors round-trip
bit-exactly at 32-bit precision.
"""

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"BSPW"
VERSION = 1


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


def save_checkpoint(path, tensors, role, config_hash="", step=0, extra=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = sorted(tensors)
    meta = {
        "role": role,
        "config_hash": config_hash,
        "step": int(step),
        "tensors": [{"name": n, "shape": list(np.asarray(tensors[n]).shape)} for n in names],
    }
    if extra:
        meta["extra"] = extra
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for n in names:
            f.write(np.ascontiguousarray(tensors[n], dtype="<f4").tobytes(order="C"))


def load_checkpoint(path):
    """Returns (tensors as float64 arrays, metadata dict)."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError("no checkpoint at %s" % path)
    with open(path, "rb") as f:
        magic = f.read(4)
        if len(magic) < 4 or magic != MAGIC:
            raise BadMagicError("%s: bad magic %r" % (path, magic))
        head = f.read(8)
        if len(head) < 8:
            raise TruncatedError("%s: truncated header" % path)
        version, meta_len = struct.unpack("<II", head)
        if version != VERSION:
            raise VersionError("%s: version %d, expected %d" % (path, version, VERSION))
        blob = f.read(meta_len)
        if len(blob) < meta_len:
            raise TruncatedError("%s: truncated metadata" % path)
        try:
            meta = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError("%s: unreadable metadata: %s" % (path, e))
        tensors = {}
        for rec in meta["tensors"]:
            shape = tuple(rec["shape"])
            count = int(np.prod(shape)) if shape else 1
            payload = f.read(4 * count)
            if len(payload) < 4 * count:
                raise TruncatedError("%s: tensor %r truncated" % (path, rec["name"]))
            tensors[rec["name"]] = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float64)
    return tensors, meta
