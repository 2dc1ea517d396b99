"""Bit-exact binary file formats: VOLRAW, MASKRAW, FEATVOL, RESULT.

Framing shared by all three binary formats:

  bytes 0..15   magic "PROTOSEG-VOL\\0\\0\\0\\0"
  bytes 16..23  little-endian uint64 length of the JSON header
  header        UTF-8 JSON: {"version": 1, "dims": [...], "dtype": "f32"|"u8", ...}
  payload       dims product x dtype size bytes, little-endian, C order
                (slice-major, row-major; FEATVOL is channel-fastest)

Payload length must match the declared dims exactly; readers fail closed on
unknown magic or version, dims/dtype mismatches, and truncated or oversized
payloads. Everything is little-endian regardless of host byte order.

A RESULT is a MASKRAW plus a sidecar JSON at <path>.json carrying the config
echo, prototype provenance, and per-slice confident-pixel counts.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .core import FeatureVolume, LabelMask, VolumeImage
from .errors import FormatError

MAGIC = b"PROTOSEG-VOL\x00\x00\x00\x00"
VERSION = 1
_MAX_HEADER = 1 << 20

_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}


def _write(path, dims, dtype: str, payload: np.ndarray, extra: dict | None = None) -> None:
    header = {"version": VERSION, "dims": [int(d) for d in dims], "dtype": dtype}
    if extra:
        header.update(extra)
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf = payload.astype(_DTYPES[dtype], copy=False).tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(buf)


def _read(path, expect_dims: int, expect_dtype: str) -> tuple[dict, np.ndarray]:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < len(MAGIC) + 8:
        raise FormatError(f"{path}: file too short to hold the header frame")
    if raw[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: unknown magic")
    (hlen,) = struct.unpack("<Q", raw[len(MAGIC) : len(MAGIC) + 8])
    if hlen > _MAX_HEADER or len(MAGIC) + 8 + hlen > len(raw):
        raise FormatError(f"{path}: header length {hlen} out of range")
    try:
        header = json.loads(raw[len(MAGIC) + 8 : len(MAGIC) + 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: malformed JSON header: {exc}") from exc
    if header.get("version") != VERSION:
        raise FormatError(f"{path}: unsupported version {header.get('version')!r}")
    dims = header.get("dims")
    if not isinstance(dims, list) or len(dims) != expect_dims or any(int(d) < 1 for d in dims):
        raise FormatError(f"{path}: expected {expect_dims} positive dims, got {dims!r}")
    dtype = header.get("dtype")
    if dtype != expect_dtype:
        raise FormatError(f"{path}: expected dtype {expect_dtype!r}, got {dtype!r}")
    dt = _DTYPES[dtype]
    count = int(np.prod([int(d) for d in dims]))
    payload = raw[len(MAGIC) + 8 + hlen :]
    if len(payload) != count * dt.itemsize:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, dims {dims} require {count * dt.itemsize}"
        )
    arr = np.frombuffer(payload, dtype=dt).reshape([int(d) for d in dims])
    return header, arr


def write_volume(path, vol: VolumeImage) -> None:
    extra = {"spacing": list(vol.spacing)} if vol.spacing is not None else None
    _write(path, vol.data.shape, "f32", vol.data, extra)


def read_volume(path) -> VolumeImage:
    header, arr = _read(path, 3, "f32")
    if not np.isfinite(arr).all():
        raise FormatError(f"{path}: volume payload contains non-finite values")
    spacing = tuple(header["spacing"]) if "spacing" in header else None
    return VolumeImage(arr, spacing=spacing)


def write_mask(path, mask: LabelMask) -> None:
    _write(path, mask.data.shape, "u8", mask.data)


def read_mask(path) -> LabelMask:
    _, arr = _read(path, 3, "u8")
    return LabelMask(arr)


def write_featvol(path, fv: FeatureVolume) -> None:
    extra = {"source_shape": list(fv.source_shape)} if fv.source_shape is not None else None
    _write(path, fv.data.shape, "f32", fv.data, extra)


def read_featvol(path) -> FeatureVolume:
    header, arr = _read(path, 4, "f32")
    if not np.isfinite(arr).all():
        raise FormatError(f"{path}: feature payload contains non-finite values")
    src = header.get("source_shape")
    if src is not None and (not isinstance(src, list) or len(src) != 2):
        raise FormatError(f"{path}: malformed source_shape {src!r}")
    return FeatureVolume(arr, source_shape=tuple(src) if src else None)


def sidecar_path(result_path) -> Path:
    return Path(str(result_path) + ".json")


def write_result(path, mask: LabelMask, sidecar: dict) -> None:
    """Write a RESULT: the predicted MASKRAW plus its JSON sidecar."""
    write_mask(path, mask)
    blob = json.dumps(sidecar, sort_keys=True, indent=2)
    sidecar_path(path).write_text(blob + "\n", encoding="utf-8")


def read_result(path) -> tuple[LabelMask, dict]:
    mask = read_mask(path)
    side = sidecar_path(path)
    if not side.exists():
        raise FormatError(f"{side}: RESULT sidecar missing")
    return mask, json.loads(side.read_text(encoding="utf-8"))
