"""Dih4-symmetric kernels, orbit sums and the two orbit-combination orders."""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import kernels
from .grid import ELEMENTS, apply_dih4, as_grid


@lru_cache(maxsize=64)
def _orbit_representatives(side: int) -> np.ndarray:
    # Flat index of the smallest (row-major) member of each pixel's Dih4 orbit.
    idx = np.arange(side * side).reshape(side, side)
    images = np.stack([apply_dih4(g, idx) for g in ELEMENTS])
    rep = images.min(axis=0).ravel()
    rep.setflags(write=False)
    return rep


def _canonical_orbit_total(image: np.ndarray) -> np.ndarray:
    """Pairwise sum of the 8 transforms, made exactly invariant.

    Each orbit's total is evaluated once (at its representative pixel) and
    copied to the other members, so the result is invariant bit for bit, not
    just up to reassociation.
    """
    t = [apply_dih4(g, image) for g in ELEMENTS]
    total = ((t[0] + t[1]) + (t[2] + t[3])) + ((t[4] + t[5]) + (t[6] + t[7]))
    return total.ravel()[_orbit_representatives(image.shape[0])].reshape(image.shape)


def dih4_orbit_sum(image: np.ndarray) -> np.ndarray:
    """Sum of the 8 Dih4 transforms of ``image``."""
    return _canonical_orbit_total(as_grid(image))


def symmetrize_kernel(kernel: np.ndarray) -> np.ndarray:
    """Orbit average: the orthogonal projection onto Dih4-invariant grids.

    Idempotent bit for bit: an invariant input sums 8 equal values pairwise,
    which is exact, and the division by 8 is exact.
    """
    return _canonical_orbit_total(as_grid(kernel)) / 8.0


def is_dih4_invariant(image: np.ndarray) -> bool:
    return all(np.array_equal(apply_dih4(g, image), image) for g in ELEMENTS[1:])


def combine_at_end(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Convolve each of the 8 transforms separately, then sum the results.

    Mathematically equal to ``conv_same(dih4_orbit_sum(image), kernel)``;
    kept as an independent route for checking that identity.
    """
    image = as_grid(image)
    kernel = as_grid(kernel)
    out = np.zeros_like(image)
    for g in ELEMENTS:
        out = out + kernels.conv_same(apply_dih4(g, image), kernel)
    return out
