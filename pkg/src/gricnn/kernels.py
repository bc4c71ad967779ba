"""Backend selection for the hot kernels.

The compiled extension is used when importable; set ``GRICNN_BACKEND=python``
to force the numpy fallback (``GRICNN_BACKEND=compiled`` makes a missing
extension an error instead of a silent fallback).
"""
from __future__ import annotations

import os

import numpy as np

from . import _pykernels

_requested = os.environ.get("GRICNN_BACKEND", "auto").lower()
if _requested not in ("auto", "python", "compiled"):
    raise ImportError(f"GRICNN_BACKEND must be auto, python or compiled, got {_requested!r}")

_impl = _pykernels
BACKEND = "python"
if _requested != "python":
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        if _requested == "compiled":
            raise


def _f64(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def conv_same(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    return _impl.conv_same(_f64(image), _f64(kernel))


def conv_kernel_grad(image: np.ndarray, grad_out: np.ndarray, k: int) -> np.ndarray:
    return _impl.conv_kernel_grad(_f64(image), _f64(grad_out), int(k))


def rotate_bilinear(src: np.ndarray, c: float, s: float, out_side: int) -> np.ndarray:
    return _impl.rotate_bilinear(_f64(src), float(c), float(s), int(out_side))


def rotate_bilinear_adjoint(grad: np.ndarray, c: float, s: float, in_side: int) -> np.ndarray:
    return _impl.rotate_bilinear_adjoint(_f64(grad), float(c), float(s), int(in_side))


def backends():
    """Map of available backend name -> kernel module (for benchmarks and tests)."""
    found = {"python": _pykernels}
    try:
        from . import _ckernels

        found["compiled"] = _ckernels
    except ImportError:
        pass
    return found
