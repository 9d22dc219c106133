"""Image containers and the resampling primitives every stage builds on.

Pixels are float64 in ``[0, 1]`` stored as ``(height, width, channels)``.
Pixel ``(row i, column j)`` has its centre at coordinate ``(x=j, y=i)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from . import _kernels
from .errors import DegenerateMask, DimensionMismatch
from .transform import AffineTransform2D, invert

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
BACKGROUND = 1.0
_RANGE_TOL = 1e-9


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class RasterImage:
    """Immutable single-level raster with values in ``[0, 1]``."""

    data: np.ndarray
    microns_per_pixel: Optional[float] = None
    level: int = 0

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64)  # always copy
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"expected (H, W), (H, W, 1) or (H, W, 3) pixels, got shape {np.shape(self.data)}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image contains non-finite values")
        lo, hi = arr.min(), arr.max()
        if lo < -_RANGE_TOL or hi > 1.0 + _RANGE_TOL:
            raise ValueError(f"intensities must lie in [0, 1], got [{lo}, {hi}]")
        np.clip(arr, 0.0, 1.0, out=arr)
        object.__setattr__(self, "data", _frozen(arr))

    @classmethod
    def from_uint8(cls, arr, **kw) -> RasterImage:
        return cls(np.asarray(arr, dtype=np.float64) / 255.0, **kw)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[:2]

    def plane(self) -> np.ndarray:
        """2D view of a single-channel image."""
        if self.channels != 1:
            raise ValueError("plane() needs a single-channel image")
        return self.data[:, :, 0]

    def crop(self, x0: int, y0: int, w: int, h: int) -> RasterImage:
        return self.with_data(self.data[y0:y0 + h, x0:x0 + w])

    def with_data(self, data) -> RasterImage:
        return RasterImage(data, microns_per_pixel=self.microns_per_pixel, level=self.level)

    def __eq__(self, other):
        if not isinstance(other, RasterImage):
            return NotImplemented
        return (self.microns_per_pixel == other.microns_per_pixel and self.level == other.level
                and self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data)))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class TissueMask:
    bits: np.ndarray

    def __post_init__(self):
        bits = np.array(self.bits, dtype=bool)
        if bits.ndim != 2:
            raise ValueError("mask must be 2D")
        if not bits.any():
            raise DegenerateMask("no tissue pixels found")
        object.__setattr__(self, "bits", _frozen(bits))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    def fraction(self) -> float:
        return self.count / self.bits.size

    def __eq__(self, other):
        if not isinstance(other, TissueMask):
            return NotImplemented
        return bool(np.array_equal(self.bits, other.bits))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class DisplacementField:
    """Per-pixel sampling offsets ``(dx, dy)``: ``out(p) = in(p + field(p))``."""

    vectors: np.ndarray = field(repr=False)

    def __post_init__(self):
        vec = np.array(self.vectors, dtype=np.float64)
        if vec.ndim != 3 or vec.shape[2] != 2:
            raise ValueError(f"expected (H, W, 2) vectors, got shape {vec.shape}")
        if not np.all(np.isfinite(vec)):
            raise ValueError("displacement field contains non-finite components")
        object.__setattr__(self, "vectors", _frozen(vec))

    @classmethod
    def constant(cls, width: int, height: int, dx: float, dy: float) -> DisplacementField:
        vec = np.empty((height, width, 2))
        vec[..., 0] = dx
        vec[..., 1] = dy
        return cls(vec)

    @classmethod
    def zeros(cls, width: int, height: int) -> DisplacementField:
        return cls(np.zeros((height, width, 2)))

    @property
    def height(self) -> int:
        return self.vectors.shape[0]

    @property
    def width(self) -> int:
        return self.vectors.shape[1]

    def __eq__(self, other):
        if not isinstance(other, DisplacementField):
            return NotImplemented
        return bool(np.array_equal(self.vectors, other.vectors))

    __hash__ = None


# ---------------------------------------------------------------------------
# colour and masking

def luminance(img: RasterImage) -> np.ndarray:
    """Rec.601 luma as a 2D array."""
    if img.channels == 1:
        return img.data[:, :, 0]
    wr, _, wb = LUMA_WEIGHTS
    r, g, b = img.data[:, :, 0], img.data[:, :, 1], img.data[:, :, 2]
    # anchored on green so equal channels map to themselves exactly
    return g + wr * (r - g) + wb * (b - g)


def to_grayscale(img: RasterImage) -> RasterImage:
    if img.channels == 1:
        return img
    return img.with_data(luminance(img))


def otsu_bin(values: np.ndarray, bins: int = 256) -> int:
    """Histogram bin ``k`` maximising between-class variance of ``{<=k}`` vs ``{>k}``.

    ``values`` are in ``[0, 1]`` and binned as ``min(floor(v * bins), bins - 1)``.
    Ties resolve to the smallest ``k``.
    """
    idx = np.minimum((np.asarray(values, dtype=np.float64).ravel() * bins).astype(np.int64), bins - 1)
    hist = np.bincount(idx, minlength=bins).astype(np.float64)
    total = hist.sum()
    levels = np.arange(bins, dtype=np.float64)
    w0 = np.cumsum(hist)
    m0 = np.cumsum(hist * levels)
    w1 = total - w0
    mu0 = np.divide(m0, w0, out=np.zeros(bins), where=w0 > 0)
    mu1 = np.divide(m0[-1] - m0, w1, out=np.zeros(bins), where=w1 > 0)
    between = w0 * w1 * (mu0 - mu1) ** 2
    return int(np.argmax(between))


def _open_close(bits: np.ndarray) -> np.ndarray:
    se = np.ones((3, 3), dtype=bool)
    # border values chosen so the image edge never erodes or dilates tissue
    opened = ndimage.binary_dilation(ndimage.binary_erosion(bits, se, border_value=1), se, border_value=0)
    return ndimage.binary_erosion(ndimage.binary_dilation(opened, se, border_value=0), se, border_value=1)


def tissue_mask(img: RasterImage, method: str = "otsu", threshold: float = 0.5) -> TissueMask:
    """Tissue where inverted luminance exceeds a threshold, then 3x3 open and close.

    ``method`` is ``"otsu"`` or ``"fixed"`` (uses ``threshold`` on the
    inverted luminance ``1 - gray``).
    """
    inv = 1.0 - luminance(img)
    if method == "otsu":
        bits = np.minimum((inv * 256).astype(np.int64), 255) > otsu_bin(inv)
    elif method == "fixed":
        bits = inv > threshold
    else:
        raise ValueError(f"unknown tissue mask method {method!r}")
    return TissueMask(_open_close(bits))


# ---------------------------------------------------------------------------
# resampling

def _area_weights(n_in: int, n_out: int) -> np.ndarray:
    """Row ``i`` holds the fractional overlap of input cells with output cell ``i``."""
    scale = n_in / n_out
    edges = np.arange(n_out + 1) * scale
    lo, hi = edges[:-1, None], edges[1:, None]
    cells = np.arange(n_in)[None, :]
    overlap = np.clip(np.minimum(hi, cells + 1) - np.maximum(lo, cells), 0.0, None)
    return overlap / scale


def resize_area(img: RasterImage, out_w: int, out_h: int) -> RasterImage:
    """Area-averaging resize to exactly ``out_w`` x ``out_h`` (reduction only)."""
    if out_w > img.width or out_h > img.height:
        raise ValueError("resize_area only reduces")
    if (out_w, out_h) == (img.width, img.height):
        return img
    wy = _area_weights(img.height, out_h)
    wx = _area_weights(img.width, out_w)
    out = np.einsum("ih,hwc,jw->ijc", wy, img.data, wx, optimize=True)
    return img.with_data(np.clip(out, 0.0, 1.0))


def downsample_size(width: int, height: int, max_dim: int) -> tuple[int, int]:
    big = max(width, height)
    if big <= max_dim:
        return width, height
    s = max_dim / big
    return max(1, min(max_dim, round(width * s))), max(1, min(max_dim, round(height * s)))


def downsample(img: RasterImage, max_dim: int) -> RasterImage:
    if max_dim < 16:
        raise ValueError("max_dim must be at least 16")
    w, h = downsample_size(img.width, img.height, max_dim)
    return resize_area(img, w, h)


def warp(img: RasterImage, fld: DisplacementField) -> RasterImage:
    """``out(p) = bilinear(img, p + fld(p))`` with coordinates clamped to the image."""
    if (fld.width, fld.height) != (img.width, img.height):
        raise DimensionMismatch(
            f"field is {fld.width}x{fld.height}, image is {img.width}x{img.height}")
    ys, xs = np.mgrid[0:img.height, 0:img.width].astype(np.float64)
    out = _kernels.bilinear_sample(img.data, xs + fld.vectors[..., 0], ys + fld.vectors[..., 1], None)
    return img.with_data(np.clip(out, 0.0, 1.0))


def sample_affine(data: np.ndarray, t: AffineTransform2D, out_w: int, out_h: int,
                  x0: float = 0.0, y0: float = 0.0, fill: float = BACKGROUND) -> np.ndarray:
    """Resample ``data`` on an output grid whose pixel ``p`` maps back through ``t^-1``.

    ``x0, y0`` offset the output grid (to resample a single tile of a larger frame).
    """
    inv = invert(t)
    return np.clip(_kernels.affine_sample(data, inv.to_list(), out_w, out_h, x0, y0, fill), 0.0, 1.0)


def apply_affine(img: RasterImage, t: AffineTransform2D, out_w: int, out_h: int,
                 fill: float = BACKGROUND) -> RasterImage:
    """Resample ``img`` into an ``out_w`` x ``out_h`` frame where ``out(p) = img(t^-1(p))``.

    Out-of-bounds samples are filled with white. Raises
    :class:`~slidepair.errors.SingularTransform` for a non-invertible ``t``.
    """
    return img.with_data(sample_affine(img.data, t, out_w, out_h, fill=fill))
