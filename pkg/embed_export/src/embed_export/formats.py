"""VOLRAW reading and FEATVOL writing.

Independent implementation of the shared binary frame so this package stands
alone: 16-byte magic, little-endian uint64 header length, JSON header, raw
little-endian payload whose length must match the declared dims exactly.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"PROTOSEG-VOL\x00\x00\x00\x00"
VERSION = 1


class FormatError(ValueError):
    pass


def read_volume(path) -> np.ndarray:
    """Read a VOLRAW file into a (S, H, W) float32 array."""
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 8 or raw[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: not a VOLRAW file (bad magic or truncated)")
    (hlen,) = struct.unpack("<Q", raw[len(MAGIC) : len(MAGIC) + 8])
    if len(MAGIC) + 8 + hlen > len(raw):
        raise FormatError(f"{path}: header length {hlen} exceeds the file")
    header = json.loads(raw[len(MAGIC) + 8 : len(MAGIC) + 8 + hlen].decode("utf-8"))
    if header.get("version") != VERSION:
        raise FormatError(f"{path}: unsupported version {header.get('version')!r}")
    if header.get("dtype") != "f32":
        raise FormatError(f"{path}: expected dtype f32, got {header.get('dtype')!r}")
    dims = header.get("dims")
    if not isinstance(dims, list) or len(dims) != 3:
        raise FormatError(f"{path}: expected 3 dims, got {dims!r}")
    payload = raw[len(MAGIC) + 8 + hlen :]
    count = int(np.prod(dims))
    if len(payload) != count * 4:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, dims {dims} need {count * 4}")
    arr = np.frombuffer(payload, dtype="<f4").reshape(dims)
    if not np.isfinite(arr).all():
        raise FormatError(f"{path}: volume contains non-finite values")
    return arr


def write_featvol(path, features: np.ndarray, source_shape: tuple[int, int] | None = None) -> None:
    """Write a (S, H, W, Z) float32 array as a FEATVOL file."""
    arr = np.ascontiguousarray(features, dtype="<f4")
    if arr.ndim != 4:
        raise FormatError(f"features must be (S, H, W, Z), got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise FormatError("refusing to write non-finite features")
    header = {"version": VERSION, "dims": [int(d) for d in arr.shape], "dtype": "f32"}
    if source_shape is not None:
        header["source_shape"] = [int(source_shape[0]), int(source_shape[1])]
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(arr.tobytes(order="C"))
