"""Numpy implementations of the kernels in ``_ckernels.pyx``."""

from __future__ import annotations

import numpy as np


def hungarian_square(cost: np.ndarray) -> np.ndarray:
    # Shortest augmenting path with row/column potentials (Kuhn-Munkres,
    # O(n^3)). Index 0 of the column arrays is a virtual column.
    a = np.asarray(cost, dtype=np.float64)
    n = a.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    padded = np.zeros((n + 1, n + 1))
    padded[1:, 1:] = a
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cur = padded[i0] - u[i0] - v
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            cand = np.where(free, minv, np.inf)
            j1 = int(np.argmin(cand))  # first minimum: deterministic ties
            delta = cand[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    assignment = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        assignment[p[j] - 1] = j - 1
    return assignment


def bilinear_sample(img: np.ndarray, xs: np.ndarray, ys: np.ndarray, fill: float | None = None) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    h, w, c = img.shape
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if fill is None:
        xs = np.clip(xs, 0.0, w - 1)
        ys = np.clip(ys, 0.0, h - 1)
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    fx = (xs - x0)[..., None]
    fy = (ys - y0)[..., None]
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    x1 = x0 + 1
    y1 = y0 + 1

    def tap(yy, xx):
        inside = (xx >= 0) & (xx < w) & (yy >= 0) & (yy < h)
        vals = img[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
        if fill is not None:
            vals = np.where(inside[..., None], vals, fill)
        return vals

    top = tap(y0, x0) * (1.0 - fx) + tap(y0, x1) * fx
    bottom = tap(y1, x0) * (1.0 - fx) + tap(y1, x1) * fx
    return top * (1.0 - fy) + bottom * fy


def affine_sample(img: np.ndarray, coeffs, out_w: int, out_h: int, x0: float = 0.0, y0: float = 0.0,
                  fill: float | None = None) -> np.ndarray:
    a, b, tx, c, d, ty = (float(v) for v in coeffs)
    ys, xs = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    xs += x0
    ys += y0
    return bilinear_sample(img, a * xs + b * ys + tx, c * xs + d * ys + ty, fill)
