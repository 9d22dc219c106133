"""Raster and displacement-field file formats.

PNG (8-bit grey or RGB) and ``SRAL`` raw dumps: the 4-byte magic
``b"SRAL"`` then little-endian u32 width, height, channels, then float32
samples. Images are stored planar (channel by channel, rows top to
bottom); displacement fields are stored as interleaved ``(dx, dy)``
pairs per pixel with ``channels = 2``.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import MalformedFile
from .imaging import DisplacementField, RasterImage

MAGIC = b"SRAL"
_HEADER = struct.Struct("<4sIII")


def read_png(path) -> RasterImage:
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB" if im.mode in ("RGBA", "P", "CMYK") else "L")
        arr = np.asarray(im)
    return RasterImage.from_uint8(arr)


def to_uint8(img: RasterImage) -> np.ndarray:
    arr = np.rint(img.data * 255.0).astype(np.uint8)
    return arr[:, :, 0] if img.channels == 1 else arr


def write_png(img: RasterImage, path) -> None:
    Image.fromarray(to_uint8(img)).save(path, format="PNG")


def _read_sral(path) -> tuple[int, int, int, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise MalformedFile(f"{path}: file too short for an SRAL header")
    magic, w, h, c = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise MalformedFile(f"{path}: bad magic {magic!r}")
    if len(raw) - _HEADER.size != 4 * w * h * c:
        raise MalformedFile(f"{path}: expected {w * h * c} float32 samples after the header")
    body = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    return w, h, c, body.astype(np.float64)


def _write_sral(path, w: int, h: int, c: int, samples: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, w, h, c))
        fh.write(np.ascontiguousarray(samples, dtype="<f4").tobytes())


def read_sral_image(path) -> RasterImage:
    w, h, c, body = _read_sral(path)
    if c not in (1, 3):
        raise MalformedFile(f"{path}: an image needs 1 or 3 channels, header says {c}")
    return RasterImage(np.clip(body.reshape(c, h, w).transpose(1, 2, 0), 0.0, 1.0))


def write_sral_image(img: RasterImage, path) -> None:
    _write_sral(path, img.width, img.height, img.channels, img.data.transpose(2, 0, 1))


def read_field(path) -> DisplacementField:
    w, h, c, body = _read_sral(path)
    if c != 2:
        raise MalformedFile(f"{path}: a displacement field needs channels=2, header says {c}")
    return DisplacementField(body.reshape(h, w, 2))


def write_field(fld: DisplacementField, path) -> None:
    _write_sral(path, fld.width, fld.height, 2, fld.vectors)


def is_sral(path) -> bool:
    with open(path, "rb") as fh:
        return fh.read(4) == MAGIC


def read_image(path) -> RasterImage:
    """Read a PNG or SRAL image, dispatching on the file's magic bytes."""
    return read_sral_image(path) if is_sral(path) else read_png(path)


def write_image(img: RasterImage, path) -> None:
    if str(path).lower().endswith(".png"):
        write_png(img, path)
    else:
        write_sral_image(img, path)


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary sibling file and rename into place."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    tmp.write_text(text)
    os.replace(tmp, path)
