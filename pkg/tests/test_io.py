import struct

import numpy as np
import pytest

from slidepair.errors import PairingError
from slidepair.imaging import DisplacementField, RasterImage
from slidepair.io import (atomic_write_text, is_sral, read_field, read_image, read_png, read_sral_image,
                          write_field, write_image, write_png, write_sral_image)

from conftest import texture


def test_png_roundtrip_rgb(tmp_path):
    img = RasterImage.from_uint8(np.random.default_rng(0).integers(0, 256, (9, 11, 3), dtype=np.uint8))
    write_png(img, tmp_path / "a.png")
    assert read_png(tmp_path / "a.png") == img


def test_png_roundtrip_gray(tmp_path):
    img = RasterImage.from_uint8(np.arange(64, dtype=np.uint8).reshape(8, 8))
    write_png(img, tmp_path / "g.png")
    back = read_png(tmp_path / "g.png")
    assert back.channels == 1 and back == img


def test_sral_image_roundtrip_planar(tmp_path):
    img = texture(0, 16, channels=3)
    p = tmp_path / "x.sral"
    write_sral_image(img, p)
    raw = p.read_bytes()
    assert raw[:4] == b"SRAL"
    assert struct.unpack("<III", raw[4:16]) == (16, 16, 3)
    # planar: first plane is channel 0 in row-major order
    first = np.frombuffer(raw[16:16 + 4 * 256], "<f4").reshape(16, 16)
    assert np.array_equal(first, img.data[..., 0].astype(np.float32))
    assert np.allclose(read_sral_image(p).data, img.data, atol=1e-7)
    assert is_sral(p) and read_image(p).shape == (16, 16)


def test_field_roundtrip(tmp_path):
    v = np.random.default_rng(1).normal(size=(5, 7, 2)).astype(np.float32).astype(np.float64)
    write_field(DisplacementField(v), tmp_path / "f.sral")
    assert read_field(tmp_path / "f.sral") == DisplacementField(v)


def test_field_rejects_image_channels(tmp_path):
    write_sral_image(texture(0, 8, channels=3), tmp_path / "i.sral")
    with pytest.raises(PairingError):
        read_field(tmp_path / "i.sral")


def test_truncated_sral(tmp_path):
    p = tmp_path / "t.sral"
    p.write_bytes(b"SRAL" + struct.pack("<III", 4, 4, 1) + b"\0" * 10)
    with pytest.raises(PairingError):
        read_sral_image(p)


def test_write_image_dispatch(tmp_path):
    img = texture(2, 8)
    write_image(img, tmp_path / "a.sral")
    write_image(img, tmp_path / "a.png")
    assert is_sral(tmp_path / "a.sral") and not is_sral(tmp_path / "a.png")


def test_atomic_write_replaces(tmp_path):
    p = tmp_path / "m.json"
    atomic_write_text(p, "one")
    atomic_write_text(p, "two")
    assert p.read_text() == "two"
    assert [q.name for q in tmp_path.iterdir()] == ["m.json"]
