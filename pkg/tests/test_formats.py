import json
import struct

import numpy as np
import pytest

from protoseg import formats
from protoseg.core import FeatureVolume, LabelMask, VolumeImage
from protoseg.errors import FormatError


def test_volume_round_trip_bit_exact(tmp_path, rng):
    vol = VolumeImage(rng.normal(size=(3, 5, 4)).astype(np.float32), spacing=(1.0, 0.8, 0.8))
    path = tmp_path / "v.volraw"
    formats.write_volume(path, vol)
    back = formats.read_volume(path)
    assert back.data.tobytes() == vol.data.tobytes()
    assert back.spacing == vol.spacing


def test_mask_round_trip(tmp_path, rng):
    mask = LabelMask(rng.integers(0, 5, size=(4, 6, 6)).astype(np.uint8))
    path = tmp_path / "m.maskraw"
    formats.write_mask(path, mask)
    np.testing.assert_array_equal(formats.read_mask(path).data, mask.data)


def test_featvol_round_trip_and_source_shape(tmp_path, rng):
    fv = FeatureVolume(rng.normal(size=(2, 3, 3, 5)).astype(np.float32), source_shape=(6, 6))
    path = tmp_path / "f.featvol"
    formats.write_featvol(path, fv)
    back = formats.read_featvol(path)
    assert back.data.tobytes() == fv.data.tobytes()
    assert back.source_shape == (6, 6)


def test_write_is_deterministic(tmp_path, rng):
    vol = VolumeImage(rng.normal(size=(2, 4, 4)).astype(np.float32))
    a, b = tmp_path / "a", tmp_path / "b"
    formats.write_volume(a, vol)
    formats.write_volume(b, vol)
    assert a.read_bytes() == b.read_bytes()


def test_unknown_magic_rejected(tmp_path):
    path = tmp_path / "bad.volraw"
    path.write_bytes(b"NOT-A-PROTOSEG!!" + b"\x00" * 64)
    with pytest.raises(FormatError, match="magic"):
        formats.read_volume(path)


def test_unsupported_version_rejected(tmp_path):
    header = json.dumps({"version": 99, "dims": [1, 1, 1], "dtype": "f32"}).encode()
    path = tmp_path / "v99.volraw"
    path.write_bytes(formats.MAGIC + struct.pack("<Q", len(header)) + header + b"\x00" * 4)
    with pytest.raises(FormatError, match="version"):
        formats.read_volume(path)


def test_truncated_payload_rejected(tmp_path, rng):
    vol = VolumeImage(rng.normal(size=(2, 4, 4)).astype(np.float32))
    path = tmp_path / "t.volraw"
    formats.write_volume(path, vol)
    raw = path.read_bytes()
    path.write_bytes(raw[:-3])
    with pytest.raises(FormatError, match="payload"):
        formats.read_volume(path)


def test_oversized_payload_rejected(tmp_path, rng):
    vol = VolumeImage(rng.normal(size=(2, 4, 4)).astype(np.float32))
    path = tmp_path / "o.volraw"
    formats.write_volume(path, vol)
    path.write_bytes(path.read_bytes() + b"\x00\x00")
    with pytest.raises(FormatError, match="payload"):
        formats.read_volume(path)


def test_dims_dtype_mismatches_rejected(tmp_path, rng):
    fv = FeatureVolume(rng.normal(size=(1, 2, 2, 2)).astype(np.float32))
    fpath = tmp_path / "f.featvol"
    formats.write_featvol(fpath, fv)
    with pytest.raises(FormatError):
        formats.read_volume(fpath)  # 4 dims where 3 expected
    mask = LabelMask(np.zeros((1, 2, 2), dtype=np.uint8))
    mpath = tmp_path / "m.maskraw"
    formats.write_mask(mpath, mask)
    with pytest.raises(FormatError):
        formats.read_volume(mpath)  # u8 where f32 expected


def test_non_finite_payload_rejected(tmp_path):
    data = np.zeros((1, 2, 2), dtype=np.float32)
    data[0, 0, 0] = np.inf
    header = json.dumps({"version": 1, "dims": [1, 2, 2], "dtype": "f32"}).encode()
    path = tmp_path / "inf.volraw"
    path.write_bytes(formats.MAGIC + struct.pack("<Q", len(header)) + header + data.tobytes())
    with pytest.raises(FormatError, match="finite"):
        formats.read_volume(path)


def test_payload_is_little_endian(tmp_path):
    vol = VolumeImage(np.array([[[1.0]]], dtype=np.float32))
    path = tmp_path / "le.volraw"
    formats.write_volume(path, vol)
    raw = path.read_bytes()
    assert raw[-4:] == struct.pack("<f", 1.0)


def test_result_round_trip(tmp_path):
    mask = LabelMask(np.ones((2, 3, 3), dtype=np.uint8))
    sidecar = {"config": {"gamma": 0.95}, "confident_pixels_per_slice": [4, 5]}
    path = tmp_path / "r.maskraw"
    formats.write_result(path, mask, sidecar)
    back_mask, back_side = formats.read_result(path)
    np.testing.assert_array_equal(back_mask.data, mask.data)
    assert back_side == sidecar


def test_result_missing_sidecar(tmp_path):
    mask = LabelMask(np.ones((1, 2, 2), dtype=np.uint8))
    path = tmp_path / "r.maskraw"
    formats.write_mask(path, mask)
    with pytest.raises(FormatError, match="sidecar"):
        formats.read_result(path)


def test_random_round_trips_bulk(tmp_path, rng):
    for i in range(25):
        vol = VolumeImage(rng.normal(size=(2, 3, 4)).astype(np.float32))
        p = tmp_path / f"v{i}"
        formats.write_volume(p, vol)
        assert formats.read_volume(p).data.tobytes() == vol.data.tobytes()
