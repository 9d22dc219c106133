# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. Same contracts as ``_fallback``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, INFINITY

cnp.import_array()


def hungarian_square(cost):
    cdef const double[:, ::1] a = np.ascontiguousarray(cost, dtype=np.float64)
    cdef Py_ssize_t n = a.shape[0]
    cdef double[::1] u = np.zeros(n + 1)
    cdef double[::1] v = np.zeros(n + 1)
    cdef double[::1] minv = np.empty(n + 1)
    cdef cnp.int64_t[::1] p = np.zeros(n + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] way = np.zeros(n + 1, dtype=np.int64)
    cdef unsigned char[::1] used = np.zeros(n + 1, dtype=np.uint8)
    cdef Py_ssize_t i, j, j0, j1, i0
    cdef double delta, cur
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        for j in range(n + 1):
            minv[j] = INFINITY
            used[j] = 0
        while True:
            used[j0] = 1
            i0 = p[j0]
            delta = INFINITY
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = a[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    out = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] res = out
    for j in range(1, n + 1):
        res[p[j] - 1] = j - 1
    return out


cdef inline double _tap(const double[:, :, ::1] img, Py_ssize_t yy, Py_ssize_t xx, Py_ssize_t ch,
                        Py_ssize_t h, Py_ssize_t w, bint use_fill, double fill) nogil:
    if xx < 0 or xx >= w or yy < 0 or yy >= h:
        if use_fill:
            return fill
        if xx < 0:
            xx = 0
        elif xx >= w:
            xx = w - 1
        if yy < 0:
            yy = 0
        elif yy >= h:
            yy = h - 1
    return img[yy, xx, ch]


def bilinear_sample(img, xs, ys, fill=None):
    cdef const double[:, :, ::1] src = np.ascontiguousarray(img, dtype=np.float64)
    xs_arr = np.asarray(xs, dtype=np.float64)
    shape = xs_arr.shape
    cdef const double[::1] xv = np.ascontiguousarray(xs_arr).ravel()
    cdef const double[::1] yv = np.ascontiguousarray(ys, dtype=np.float64).ravel()
    cdef Py_ssize_t h = src.shape[0], w = src.shape[1], c = src.shape[2]
    cdef Py_ssize_t n = xv.shape[0]
    out = np.empty((n, c), dtype=np.float64)
    cdef double[:, ::1] res = out
    cdef bint use_fill = fill is not None
    cdef double fval = float(fill) if fill is not None else 0.0
    cdef Py_ssize_t k, ch, ix, iy
    cdef double x, y, fx, fy, x0, y0, top, bottom
    with nogil:
        for k in range(n):
            x = xv[k]
            y = yv[k]
            if not use_fill:
                if x < 0.0:
                    x = 0.0
                elif x > w - 1:
                    x = w - 1
                if y < 0.0:
                    y = 0.0
                elif y > h - 1:
                    y = h - 1
            x0 = floor(x)
            y0 = floor(y)
            fx = x - x0
            fy = y - y0
            ix = <Py_ssize_t>x0
            iy = <Py_ssize_t>y0
            for ch in range(c):
                top = (_tap(src, iy, ix, ch, h, w, use_fill, fval) * (1.0 - fx)
                       + _tap(src, iy, ix + 1, ch, h, w, use_fill, fval) * fx)
                bottom = (_tap(src, iy + 1, ix, ch, h, w, use_fill, fval) * (1.0 - fx)
                          + _tap(src, iy + 1, ix + 1, ch, h, w, use_fill, fval) * fx)
                res[k, ch] = top * (1.0 - fy) + bottom * fy
    return out.reshape(shape + (c,))


def affine_sample(img, coeffs, Py_ssize_t out_w, Py_ssize_t out_h, double x0=0.0, double y0=0.0, fill=None):
    cdef const double[:, :, ::1] src = np.ascontiguousarray(img, dtype=np.float64)
    cdef double a = coeffs[0], b = coeffs[1], tx = coeffs[2]
    cdef double cc = coeffs[3], d = coeffs[4], ty = coeffs[5]
    cdef Py_ssize_t h = src.shape[0], w = src.shape[1], c = src.shape[2]
    out = np.empty((out_h, out_w, c), dtype=np.float64)
    cdef double[:, :, ::1] res = out
    cdef bint use_fill = fill is not None
    cdef double fval = float(fill) if fill is not None else 0.0
    cdef Py_ssize_t i, j, ch, ix, iy
    cdef double px, py, x, y, fx, fy, xf, yf, top, bottom
    with nogil:
        for i in range(out_h):
            py = i + y0
            for j in range(out_w):
                px = j + x0
                x = a * px + b * py + tx
                y = cc * px + d * py + ty
                if not use_fill:
                    if x < 0.0:
                        x = 0.0
                    elif x > w - 1:
                        x = w - 1
                    if y < 0.0:
                        y = 0.0
                    elif y > h - 1:
                        y = h - 1
                xf = floor(x)
                yf = floor(y)
                fx = x - xf
                fy = y - yf
                ix = <Py_ssize_t>xf
                iy = <Py_ssize_t>yf
                for ch in range(c):
                    top = (_tap(src, iy, ix, ch, h, w, use_fill, fval) * (1.0 - fx)
                           + _tap(src, iy, ix + 1, ch, h, w, use_fill, fval) * fx)
                    bottom = (_tap(src, iy + 1, ix, ch, h, w, use_fill, fval) * (1.0 - fx)
                              + _tap(src, iy + 1, ix + 1, ch, h, w, use_fill, fval) * fx)
                    res[i, j, ch] = top * (1.0 - fy) + bottom * fy
    return out
