# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: same-size correlation and bilinear rotation.

Every routine here has a numpy twin in ``_pykernels`` that evaluates the
same floating-point operations in the same order, so the two backends agree
bit for bit on the forward paths.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, fabs

cnp.import_array()


def conv_same(const double[:, ::1] image, const double[:, ::1] kernel):
    cdef Py_ssize_t n = image.shape[0]
    cdef Py_ssize_t k = kernel.shape[0]
    cdef Py_ssize_t p = (k - 1) // 2
    cdef Py_ssize_t i, j, a, b
    cdef double acc
    padded_arr = np.zeros((n + 2 * p, n + 2 * p), dtype=np.float64)
    cdef double[:, ::1] padded = padded_arr
    padded[p:p + n, p:p + n] = image
    out_arr = np.empty((n, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for i in range(n):
            for j in range(n):
                acc = 0.0
                for a in range(k):
                    for b in range(k):
                        acc = acc + kernel[a, b] * padded[i + a, j + b]
                out[i, j] = acc
    return out_arr


def conv_kernel_grad(const double[:, ::1] image, const double[:, ::1] grad_out, Py_ssize_t k):
    cdef Py_ssize_t n = image.shape[0]
    cdef Py_ssize_t p = (k - 1) // 2
    cdef Py_ssize_t i, j, a, b
    cdef double acc
    padded_arr = np.zeros((n + 2 * p, n + 2 * p), dtype=np.float64)
    cdef double[:, ::1] padded = padded_arr
    padded[p:p + n, p:p + n] = image
    out_arr = np.empty((k, k), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for a in range(k):
            for b in range(k):
                acc = 0.0
                for i in range(n):
                    for j in range(n):
                        acc = acc + grad_out[i, j] * padded[i + a, j + b]
                out[a, b] = acc
    return out_arr


cdef inline void _sort4(double* t) noexcept nogil:
    cdef double tmp
    cdef int i, j
    for i in range(1, 4):
        tmp = t[i]
        j = i - 1
        while j >= 0 and t[j] > tmp:
            t[j + 1] = t[j]
            j -= 1
        t[j + 1] = tmp


def rotate_bilinear(const double[:, ::1] src, double c, double s, Py_ssize_t out_side):
    cdef Py_ssize_t n = src.shape[0]
    cdef Py_ssize_t ci = (n - 1) // 2
    cdef Py_ssize_t co = (out_side - 1) // 2
    cdef Py_ssize_t r, col, dy, dx, row_src, col_src, q
    cdef double xd, yd, xs, ys, x0, y0, yy, xx, wy, wx
    cdef double t[4]
    out_arr = np.empty((out_side, out_side), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for r in range(out_side):
            yd = <double>(co - r)
            for col in range(out_side):
                xd = <double>(col - co)
                xs = c * xd + s * yd
                ys = c * yd - s * xd
                x0 = floor(xs)
                y0 = floor(ys)
                q = 0
                for dy in range(2):
                    yy = y0 + dy
                    wy = 1.0 - fabs(ys - yy)
                    row_src = ci - <Py_ssize_t>yy
                    for dx in range(2):
                        xx = x0 + dx
                        wx = 1.0 - fabs(xs - xx)
                        col_src = <Py_ssize_t>xx + ci
                        if 0 <= row_src < n and 0 <= col_src < n:
                            t[q] = (wx * wy) * src[row_src, col_src]
                        else:
                            t[q] = 0.0
                        q += 1
                _sort4(t)
                out[r, col] = ((t[0] + t[1]) + t[2]) + t[3]
    return out_arr


def rotate_bilinear_adjoint(const double[:, ::1] grad, double c, double s, Py_ssize_t in_side):
    cdef Py_ssize_t m = grad.shape[0]
    cdef Py_ssize_t ci = (in_side - 1) // 2
    cdef Py_ssize_t co = (m - 1) // 2
    cdef Py_ssize_t r, col, dy, dx, row_src, col_src
    cdef double xd, yd, xs, ys, x0, y0, yy, xx, wy, wx, g
    out_arr = np.zeros((in_side, in_side), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for r in range(m):
            yd = <double>(co - r)
            for col in range(m):
                g = grad[r, col]
                xd = <double>(col - co)
                xs = c * xd + s * yd
                ys = c * yd - s * xd
                x0 = floor(xs)
                y0 = floor(ys)
                for dy in range(2):
                    yy = y0 + dy
                    wy = 1.0 - fabs(ys - yy)
                    row_src = ci - <Py_ssize_t>yy
                    for dx in range(2):
                        xx = x0 + dx
                        wx = 1.0 - fabs(xs - xx)
                        col_src = <Py_ssize_t>xx + ci
                        if 0 <= row_src < in_side and 0 <= col_src < in_side:
                            out[row_src, col_src] += (wx * wy) * g
    return out_arr
