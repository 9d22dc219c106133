"""2D affine transforms in pixel coordinates (x right, y down)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import SingularTransform

_DET_EPS = 1e-12


@dataclass(frozen=True)
class AffineTransform2D:
    """Maps ``(x, y)`` to ``(a*x + b*y + tx, c*x + d*y + ty)``."""

    a: float = 1.0
    b: float = 0.0
    tx: float = 0.0
    c: float = 0.0
    d: float = 1.0
    ty: float = 0.0

    def __post_init__(self):
        for name in ("a", "b", "tx", "c", "d", "ty"):
            val = float(getattr(self, name))
            if not math.isfinite(val):
                raise ValueError(f"affine entry {name} is not finite: {val}")
            object.__setattr__(self, name, val)

    # constructors -----------------------------------------------------
    @classmethod
    def identity(cls) -> AffineTransform2D:
        return cls()

    @classmethod
    def translation(cls, dx: float, dy: float) -> AffineTransform2D:
        return cls(1.0, 0.0, dx, 0.0, 1.0, dy)

    @classmethod
    def rotation(cls, degrees: float, center: tuple[float, float] = (0.0, 0.0)) -> AffineTransform2D:
        """Rotation matrix ``[[cos, -sin], [sin, cos]]`` about ``center``.

        Pixel rows grow downwards, so a positive angle turns content
        clockwise on screen.
        """
        th = math.radians(degrees)
        cs, sn = math.cos(th), math.sin(th)
        cx, cy = center
        return cls(cs, -sn, cx - (cs * cx - sn * cy), sn, cs, cy - (sn * cx + cs * cy))

    @classmethod
    def from_matrix(cls, m) -> AffineTransform2D:
        m = np.asarray(m, dtype=np.float64)
        if m.shape not in ((2, 3), (3, 3)):
            raise ValueError(f"expected a 2x3 or 3x3 matrix, got shape {m.shape}")
        return cls(m[0, 0], m[0, 1], m[0, 2], m[1, 0], m[1, 1], m[1, 2])

    @classmethod
    def from_list(cls, values) -> AffineTransform2D:
        """Inverse of :meth:`to_list` (``[a, b, tx, c, d, ty]``)."""
        values = list(values)
        if len(values) != 6:
            raise ValueError(f"expected 6 affine entries, got {len(values)}")
        return cls(*values)

    # views ------------------------------------------------------------
    def to_list(self) -> list[float]:
        return [self.a, self.b, self.tx, self.c, self.d, self.ty]

    def matrix(self) -> np.ndarray:
        """3x3 homogeneous matrix."""
        return np.array([[self.a, self.b, self.tx], [self.c, self.d, self.ty], [0.0, 0.0, 1.0]])

    @property
    def det(self) -> float:
        return self.a * self.d - self.b * self.c

    def is_invertible(self) -> bool:
        return abs(self.det) > _DET_EPS

    # actions ----------------------------------------------------------
    def apply(self, points) -> np.ndarray:
        """Map an ``(N, 2)`` array (or a single ``(x, y)``) of points."""
        pts = np.asarray(points, dtype=np.float64)
        x, y = pts[..., 0], pts[..., 1]
        return np.stack([self.a * x + self.b * y + self.tx, self.c * x + self.d * y + self.ty], axis=-1)

    def __call__(self, points) -> np.ndarray:
        return self.apply(points)

    def __matmul__(self, other: AffineTransform2D) -> AffineTransform2D:
        return compose(self, other)

    def inverse(self) -> AffineTransform2D:
        return invert(self)


def compose(t1: AffineTransform2D, t2: AffineTransform2D) -> AffineTransform2D:
    """Transform equivalent to applying ``t2`` first, then ``t1``."""
    return AffineTransform2D(
        t1.a * t2.a + t1.b * t2.c,
        t1.a * t2.b + t1.b * t2.d,
        t1.a * t2.tx + t1.b * t2.ty + t1.tx,
        t1.c * t2.a + t1.d * t2.c,
        t1.c * t2.b + t1.d * t2.d,
        t1.c * t2.tx + t1.d * t2.ty + t1.ty,
    )


def invert(t: AffineTransform2D) -> AffineTransform2D:
    det = t.det
    if not abs(det) > _DET_EPS:
        raise SingularTransform(f"affine transform is singular (det={det:.3e})")
    ia, ib = t.d / det, -t.b / det
    ic, id_ = -t.c / det, t.a / det
    return AffineTransform2D(ia, ib, -(ia * t.tx + ib * t.ty), ic, id_, -(ic * t.tx + id_ * t.ty))


def require_invertible(t: AffineTransform2D) -> None:
    if not t.is_invertible():
        raise SingularTransform(f"affine transform is singular (det={t.det:.3e})")


def rotation_angle(t: AffineTransform2D) -> float:
    """Angle in degrees of the rotation part, in ``[-180, 180)``."""
    return wrap_degrees(math.degrees(math.atan2(t.c, t.a)))


def wrap_degrees(angle: float) -> float:
    """Wrap an angle in degrees into ``[-180, 180)``."""
    out = (angle + 180.0) % 360.0 - 180.0
    return 0.0 if out == 0.0 else out
