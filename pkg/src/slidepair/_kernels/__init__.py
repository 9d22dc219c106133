"""Hot inner loops, with a compiled backend and a numpy fallback.

The Cython extension ``_ckernels`` is used when it was built and can be
imported. Set ``SLIDEPAIR_PURE_PYTHON=1`` to force the fallback.
Both backends expose the same three functions:

``hungarian_square(cost) -> ndarray[int64]``
    Column assigned to each row of a square cost matrix, minimizing the total.
``bilinear_sample(img, xs, ys, fill) -> ndarray``
    Sample an ``(H, W, C)`` float64 image at real coordinates. ``fill=None``
    clamps coordinates to the image; a float fills out-of-bounds neighbours.
``affine_sample(img, coeffs, out_w, out_h, x0, y0, fill) -> ndarray``
    Same sampling on the grid ``(x0 + j, y0 + i)`` pushed through the affine
    ``coeffs = (a, b, tx, c, d, ty)``, without materializing coordinate arrays.
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _fallback

_compiled: ModuleType | None
try:
    from . import _ckernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS: dict[str, ModuleType] = {"python": _fallback}
if _compiled is not None:
    BACKENDS["cython"] = _compiled

if os.environ.get("SLIDEPAIR_PURE_PYTHON", "") == "1" or _compiled is None:
    BACKEND = "python"
else:
    BACKEND = "cython"

_active = BACKENDS[BACKEND]
hungarian_square = _active.hungarian_square
bilinear_sample = _active.bilinear_sample
affine_sample = _active.affine_sample


def get_backend(name: str) -> ModuleType:
    """Return the kernel module called ``name`` ("python" or "cython")."""
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} is not available; have {sorted(BACKENDS)}") from None
