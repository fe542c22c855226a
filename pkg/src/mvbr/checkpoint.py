"""Named-tensor checkpoint container ("MTBP" version 1).

Layout, little-endian:

    magic "MTBP" | u8 version | u32 config_len | config JSON (canonical:
    sorted keys, compact separators, UTF-8) | u32 n_tensors
    per tensor: u16 name_len | name UTF-8 | u8 rank | rank * u32 dims
    | float64 payload, row-major

Canonical JSON plus fixed tensor order makes write -> read -> write
byte-identical.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import FormatError, ValidationError

__all__ = ["CHECKPOINT_MAGIC", "CHECKPOINT_VERSION", "write_checkpoint", "read_checkpoint"]

CHECKPOINT_MAGIC = b"MTBP"
CHECKPOINT_VERSION = 1


def write_checkpoint(path, config, named_tensors):
    """Serialize a JSON-able config dict and an ordered (name, array) list."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<B", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(named_tensors)))
        for name, arr in named_tensors:
            arr = np.asarray(arr, dtype=np.float64)
            encoded = name.encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise ValidationError(f"tensor name too long: {name[:32]!r}...")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.astype("<f8").tobytes())


def read_checkpoint(path):
    """Inverse of ``write_checkpoint``; returns (config, [(name, array), ...])."""
    with open(path, "rb") as fh:
        data = fh.read()

    offset = 0

    def take(n, what):
        nonlocal offset
        if offset + n > len(data):
            raise FormatError(f"truncated while reading {what}", offset=len(data))
        view = data[offset : offset + n]
        offset += n
        return view

    magic = take(4, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}", offset=0)
    (version,) = struct.unpack("<B", take(1, "version"))
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    (config_len,) = struct.unpack("<I", take(4, "config length"))
    try:
        config = json.loads(take(config_len, "config block").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"invalid config block: {exc}", offset=offset - config_len)
    (n_tensors,) = struct.unpack("<I", take(4, "tensor count"))
    tensors = []
    for _ in range(n_tensors):
        (name_len,) = struct.unpack("<H", take(2, "tensor name length"))
        name = take(name_len, "tensor name").decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, "tensor rank"))
        dims = [
            struct.unpack("<I", take(4, f"dim {i} of {name!r}"))[0]
            for i in range(rank)
        ]
        count = int(np.prod(dims, dtype=np.int64)) if dims else 1
        raw = take(count * 8, f"payload of {name!r}")
        tensors.append((name, np.frombuffer(raw, dtype="<f8").reshape(dims).copy()))
    if offset != len(data):
        raise FormatError("trailing bytes after final tensor", offset=offset)
    return config, tensors
