# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Semantics match ``_pykernels`` exactly."""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, sqrt, exp, fabs

cnp.import_array()


def bilinear_sample(img, xs, ys, double fill=0.0):
    cdef double[:, ::1] im = np.ascontiguousarray(img, dtype=np.float64)
    xs_arr = np.ascontiguousarray(xs, dtype=np.float64)
    ys_arr = np.ascontiguousarray(ys, dtype=np.float64)
    shape = xs_arr.shape
    cdef double[::1] xv = xs_arr.ravel()
    cdef double[::1] yv = ys_arr.ravel()
    out_arr = np.empty(xv.shape[0], dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t h = im.shape[0], w = im.shape[1]
    cdef Py_ssize_t i, n = xv.shape[0], x0, y0, x1, y1
    cdef Py_ssize_t xmax = w - 2 if w >= 2 else 0
    cdef Py_ssize_t ymax = h - 2 if h >= 2 else 0
    cdef double x, y, fx, fy, top, bot
    with nogil:
        for i in range(n):
            x = xv[i]
            y = yv[i]
            if not (x >= 0 and x <= w - 1 and y >= 0 and y <= h - 1):
                out[i] = fill
                continue
            x0 = <Py_ssize_t>floor(x)
            y0 = <Py_ssize_t>floor(y)
            if x0 > xmax:
                x0 = xmax
            if y0 > ymax:
                y0 = ymax
            fx = x - x0
            fy = y - y0
            x1 = x0 + 1 if x0 + 1 < w else w - 1
            y1 = y0 + 1 if y0 + 1 < h else h - 1
            top = im[y0, x0] * (1.0 - fx) + im[y0, x1] * fx
            bot = im[y1, x0] * (1.0 - fx) + im[y1, x1] * fx
            out[i] = top * (1.0 - fy) + bot * fy
    return out_arr.reshape(shape)


cdef inline Py_ssize_t _reflect(Py_ssize_t i, Py_ssize_t n) nogil:
    cdef Py_ssize_t period = 2 * n
    i = i % period
    if i < 0:
        i += period
    if i >= n:
        i = period - 1 - i
    return i


def correlate1d_reflect(img, kernel, int axis):
    cdef double[:, ::1] im = np.ascontiguousarray(img, dtype=np.float64)
    cdef double[::1] k = np.ascontiguousarray(kernel, dtype=np.float64)
    cdef Py_ssize_t h = im.shape[0], w = im.shape[1]
    cdef Py_ssize_t nk = k.shape[0], half = nk // 2
    out_arr = np.zeros((h, w), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t n = h if axis == 0 else w
    idx_arr = np.empty((n, nk), dtype=np.intp)
    cdef Py_ssize_t[:, ::1] idx = idx_arr
    cdef Py_ssize_t i, j, y, x, src
    cdef double kj, acc
    for i in range(n):
        for j in range(nk):
            idx[i, j] = _reflect(i + j - half, n)
    with nogil:
        if axis == 0:
            # accumulate tap by tap in kernel order, matching the numpy fallback
            for y in range(h):
                for j in range(nk):
                    kj = k[j]
                    src = idx[y, j]
                    for x in range(w):
                        out[y, x] += kj * im[src, x]
        else:
            for y in range(h):
                for x in range(w):
                    acc = 0.0
                    for j in range(nk):
                        acc = acc + k[j] * im[y, idx[x, j]]
                    out[y, x] = acc
    return out_arr


def box_sum(img, int r):
    cdef double[:, ::1] im = np.ascontiguousarray(img, dtype=np.float64)
    cdef Py_ssize_t h = im.shape[0], w = im.shape[1]
    cdef Py_ssize_t y, x, lo, hi
    cdef double[:, ::1] c = np.zeros((h + 1, w + 1), dtype=np.float64)
    out_arr = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double run
    cdef Py_ssize_t y0, y1, x0, x1
    with nogil:
        # same cumulative-sum order as numpy: cumsum along rows first, then columns
        for x in range(w):
            run = 0.0
            for y in range(h):
                run = run + im[y, x]
                c[y + 1, x + 1] = run
        for y in range(1, h + 1):
            run = 0.0
            for x in range(1, w + 1):
                run = run + c[y, x]
                c[y, x] = run
        for y in range(h):
            y0 = y - r if y - r > 0 else 0
            y1 = y + r + 1 if y + r + 1 < h else h
            for x in range(w):
                x0 = x - r if x - r > 0 else 0
                x1 = x + r + 1 if x + r + 1 < w else w
                out[y, x] = c[y1, x1] - c[y0, x1] - c[y1, x0] + c[y0, x0]
    return out_arr


def frangi_response(ixx, ixy, iyy, double beta, double c, bint dark):
    cdef double[:, ::1] a = np.ascontiguousarray(ixx, dtype=np.float64)
    cdef double[:, ::1] b = np.ascontiguousarray(ixy, dtype=np.float64)
    cdef double[:, ::1] d = np.ascontiguousarray(iyy, dtype=np.float64)
    cdef Py_ssize_t h = a.shape[0], w = a.shape[1], y, x
    out_arr = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double tmp, mu1, mu2, l1, l2, rb, s2
    cdef double tb2 = 2.0 * beta * beta, tc2 = 2.0 * c * c
    with nogil:
        for y in range(h):
            for x in range(w):
                tmp = sqrt((a[y, x] - d[y, x]) * (a[y, x] - d[y, x]) + 4.0 * b[y, x] * b[y, x])
                mu1 = 0.5 * (a[y, x] + d[y, x] + tmp)
                mu2 = 0.5 * (a[y, x] + d[y, x] - tmp)
                if fabs(mu1) > fabs(mu2):
                    l1 = mu2
                    l2 = mu1
                else:
                    l1 = mu1
                    l2 = mu2
                if (dark and not l2 > 0) or (not dark and not l2 < 0):
                    out[y, x] = 0.0
                    continue
                rb = l1 / l2
                s2 = l1 * l1 + l2 * l2
                out[y, x] = exp(-(rb * rb) / tb2) * (1.0 - exp(-s2 / tc2))
    return out_arr
