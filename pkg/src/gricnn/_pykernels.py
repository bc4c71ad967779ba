"""Pure numpy implementations of the hot kernels.

Used when the compiled extension is unavailable or when
``GRICNN_BACKEND=python`` is set. ``conv_same`` and ``rotate_bilinear``
reproduce the compiled loops' arithmetic order exactly.
"""
from __future__ import annotations

import numpy as np


def conv_same(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    n = image.shape[0]
    k = kernel.shape[0]
    p = (k - 1) // 2
    padded = np.zeros((n + 2 * p, n + 2 * p))
    padded[p:p + n, p:p + n] = image
    out = np.zeros((n, n))
    for a in range(k):
        for b in range(k):
            out += kernel[a, b] * padded[a:a + n, b:b + n]
    return out


def conv_kernel_grad(image: np.ndarray, grad_out: np.ndarray, k: int) -> np.ndarray:
    n = image.shape[0]
    p = (k - 1) // 2
    padded = np.zeros((n + 2 * p, n + 2 * p))
    padded[p:p + n, p:p + n] = image
    out = np.empty((k, k))
    for a in range(k):
        for b in range(k):
            out[a, b] = np.dot(grad_out.ravel(), padded[a:a + n, b:b + n].ravel())
    return out


def _footprint(c: float, s: float, dest_side: int, src_side: int):
    """Source indices and bilinear weights for every destination pixel.

    Returns (rows, cols, weights, inside), each shaped (dest_side**2, 4) with
    neighbours ordered (dy, dx) = (0,0), (0,1), (1,0), (1,1).
    """
    co = (dest_side - 1) // 2
    ci = (src_side - 1) // 2
    r, col = np.meshgrid(np.arange(dest_side), np.arange(dest_side), indexing="ij")
    yd = (co - r).astype(np.float64).ravel()
    xd = (col - co).astype(np.float64).ravel()
    xs = c * xd + s * yd
    ys = c * yd - s * xd
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    rows, cols, weights = [], [], []
    for dy in (0, 1):
        yy = y0 + dy
        wy = 1.0 - np.abs(ys - yy)
        for dx in (0, 1):
            xx = x0 + dx
            wx = 1.0 - np.abs(xs - xx)
            rows.append(ci - yy.astype(np.int64))
            cols.append(xx.astype(np.int64) + ci)
            weights.append(wx * wy)
    rows = np.stack(rows, axis=1)
    cols = np.stack(cols, axis=1)
    weights = np.stack(weights, axis=1)
    inside = (rows >= 0) & (rows < src_side) & (cols >= 0) & (cols < src_side)
    return rows, cols, weights, inside


def rotate_bilinear(src: np.ndarray, c: float, s: float, out_side: int) -> np.ndarray:
    n = src.shape[0]
    rows, cols, weights, inside = _footprint(c, s, out_side, n)
    values = np.zeros_like(weights)
    values[inside] = src[rows[inside], cols[inside]]
    terms = np.where(inside, weights * values, 0.0)
    terms.sort(axis=1)
    out = ((terms[:, 0] + terms[:, 1]) + terms[:, 2]) + terms[:, 3]
    return out.reshape(out_side, out_side)


def rotate_bilinear_adjoint(grad: np.ndarray, c: float, s: float, in_side: int) -> np.ndarray:
    m = grad.shape[0]
    rows, cols, weights, inside = _footprint(c, s, m, in_side)
    contrib = weights * grad.reshape(-1, 1)
    flat = rows[inside] * in_side + cols[inside]
    out = np.bincount(flat, weights=contrib[inside], minlength=in_side * in_side)
    return out.reshape(in_side, in_side)
