"""Reference arithmetic for the adjacency-guided training losses.

No network is involved: the generated image, the adjacent-slice image and
the predicted displacement field arrive as arrays, and the adversarial,
classification, cycle and identity terms arrive as scalars.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import NamedTuple, Optional

import numpy as np

from .errors import DimensionMismatch
from .imaging import DisplacementField, RasterImage, warp


def _check_finite(obj, allow_none=()):
    for f in fields(obj):
        val = getattr(obj, f.name)
        if val is None and f.name in allow_none:
            continue
        if not math.isfinite(val):
            raise ValueError(f"{type(obj).__name__}.{f.name} is not finite: {val}")


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0

    def __post_init__(self):
        _check_finite(self)
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class GeneratorLossComponents:
    adv: float
    cls: float
    eta_adv: float
    eta_cls: float
    cyc: float
    idt: float
    adj: Optional[float] = None  # None for unpaired batches

    def __post_init__(self):
        _check_finite(self, allow_none=("adj",))


@dataclass(frozen=True)
class DiscriminatorLossComponents:
    adv: float
    cls: float
    eta_adv: float
    eta_cls: float
    frz: float

    def __post_init__(self):
        _check_finite(self)


class AdjacencyLoss(NamedTuple):
    smoothness: float
    l1: float
    total: float

    def to_json(self) -> dict:
        return {"smoothness": self.smoothness, "l1": self.l1, "total": self.total}


def field_gradient_sq(fld: DisplacementField) -> np.ndarray:
    """Per-pixel squared forward differences of both components along both axes.

    The difference past the last row or column is taken as zero.
    """
    v = fld.vectors
    gx = np.zeros_like(v)
    gy = np.zeros_like(v)
    gx[:, :-1] = v[:, 1:] - v[:, :-1]
    gy[:-1] = v[1:] - v[:-1]
    return (gx ** 2).sum(axis=2) + (gy ** 2).sum(axis=2)


def _crop(arr: np.ndarray, border: int) -> np.ndarray:
    if border <= 0:
        return arr
    if 2 * border >= min(arr.shape[0], arr.shape[1]):
        raise ValueError(f"crop border {border} leaves no pixels")
    return arr[border:-border, border:-border]


def adjacency_loss(generated: RasterImage, adjacent: RasterImage, fld: DisplacementField,
                   crop_border: int = 0) -> AdjacencyLoss:
    """Smoothness of ``fld`` plus the L1 gap between ``adjacent`` and the warped ``generated``.

    Both expectations are per-sample means: the smoothness term over pixels,
    the L1 term over pixels and channels. ``crop_border`` drops that many
    pixels on every side before averaging.
    """
    if generated.shape != adjacent.shape or (fld.height, fld.width) != generated.shape:
        raise DimensionMismatch("generated, adjacent and field must share width and height")
    if generated.channels != adjacent.channels:
        raise DimensionMismatch("generated and adjacent must share the channel count")
    smooth = float(_crop(field_gradient_sq(fld), crop_border).mean())
    moved = warp(generated, fld)
    l1 = float(_crop(np.abs(adjacent.data - moved.data), crop_border).mean())
    return AdjacencyLoss(smooth, l1, smooth + l1)


def generator_loss(c: GeneratorLossComponents, w: LossWeights | None = None) -> float:
    """Weighted generator objective; the adjacency term is omitted when ``c.adj`` is None."""
    w = w or LossWeights()
    total = w.lambda1 * (c.adv + c.cls + c.cyc + c.idt) + w.lambda2 * (c.eta_adv + c.eta_cls)
    if c.adj is not None:
        total += w.lambda3 * c.adj
    return total


def discriminator_loss(c: DiscriminatorLossComponents, w: LossWeights | None = None) -> float:
    w = w or LossWeights()
    return w.lambda1 * (c.adv + c.cls) + w.lambda2 * (c.eta_adv + c.eta_cls) + w.lambda3 * c.frz
