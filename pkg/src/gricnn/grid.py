"""Square odd rasters, exact Dih4 transforms and bilinear rotation.

A grid is a 2-D float64 numpy array with an odd side length, so the centre
of rotation is always the centre pixel ``((side-1)/2, (side-1)/2)``.

Conventions used throughout the package:

* positive angles rotate counterclockwise as displayed (row 0 on top);
* rotation is destination-driven: every output pixel is mapped back into the
  source and sampled bilinearly, samples outside the source read 0;
* angles are exact ``fractions.Fraction`` degrees, converted to radians only
  inside :func:`rotation_cos_sin`.
"""
from __future__ import annotations

import math
from fractions import Fraction
from pathlib import Path
from typing import NamedTuple, Union

import numpy as np

from . import kernels

AngleLike = Union[int, str, Fraction, float]


class GridError(ValueError):
    pass


def as_grid(a) -> np.ndarray:
    """Validate and return ``a`` as a contiguous float64 square grid with odd side."""
    g = np.ascontiguousarray(a, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise GridError(f"grid must be square 2-D, got shape {g.shape}")
    if g.shape[0] % 2 == 0:
        raise GridError(f"grid side must be odd, got {g.shape[0]}")
    return g


# -- Dih4 ---------------------------------------------------------------------


class Dih4Element(NamedTuple):
    """Optional horizontal flip followed by ``quarter_turns`` CCW quarter turns."""

    quarter_turns: int = 0
    reflected: bool = False

    def __repr__(self) -> str:
        return f"Dih4({self.quarter_turns}{', s' if self.reflected else ''})"


IDENTITY = Dih4Element(0, False)
R90 = Dih4Element(1, False)
FLIP = Dih4Element(0, True)

# Canonical order: e, r, r^2, r^3, s, rs, r^2 s, r^3 s. Every orbit sum and
# average in the package iterates in this order.
ELEMENTS: tuple[Dih4Element, ...] = tuple(
    Dih4Element(q, f) for f in (False, True) for q in range(4)
)


def compose(g1: Dih4Element, g2: Dih4Element) -> Dih4Element:
    """``g1 ∘ g2``: apply ``g2`` first, then ``g1``."""
    q2 = -g2.quarter_turns if g1.reflected else g2.quarter_turns
    return Dih4Element((g1.quarter_turns + q2) % 4, g1.reflected != g2.reflected)


def inverse(g: Dih4Element) -> Dih4Element:
    if g.reflected:
        return g
    return Dih4Element((-g.quarter_turns) % 4, False)


def apply_dih4(g: Dih4Element, image: np.ndarray) -> np.ndarray:
    """Exact index permutation; values are copied, never combined."""
    out = image[:, ::-1] if g.reflected else image
    return np.ascontiguousarray(np.rot90(out, g.quarter_turns % 4))


# -- angles -------------------------------------------------------------------


def as_angle(value: AngleLike) -> Fraction:
    """Exact angle in degrees, normalised to [0, 360).

    Strings accept ``"15"``, ``"1/2"`` or ``"0.1"``; floats go through their
    decimal repr so ``0.1`` means one tenth.
    """
    if isinstance(value, float):
        value = str(value)
    return Fraction(value) % 360


def rotation_cos_sin(angle: AngleLike) -> tuple[float, float]:
    """Cosine and sine of an exact angle with Dih4-consistent rounding.

    The pair for ``-a`` is ``(c, -s)`` and the pair for ``a + 90`` is
    ``(-s, c)`` bit for bit, which is what makes bilinear rotation commute
    exactly with quarter turns and reflections.
    """
    a = as_angle(angle)
    quarter, phi = divmod(a, 90)
    if phi == 0:
        c0, s0 = 1.0, 0.0
    elif phi == 45:
        c0 = s0 = math.sqrt(0.5)
    elif phi < 45:
        rad = float(phi) * math.pi / 180.0
        c0, s0 = math.cos(rad), math.sin(rad)
    else:
        rad = float(90 - phi) * math.pi / 180.0
        c0, s0 = math.sin(rad), math.cos(rad)
    return [(c0, s0), (-s0, c0), (-c0, -s0), (s0, -c0)][int(quarter)]


# -- resampling ---------------------------------------------------------------


def rotate_bilinear(image: np.ndarray, angle: AngleLike, out_side: int | None = None) -> np.ndarray:
    """Rotate ``image`` CCW by ``angle`` about its centre pixel onto an ``out_side`` grid."""
    image = as_grid(image)
    side = image.shape[0]
    out_side = side if out_side is None else int(out_side)
    if out_side < side or out_side % 2 == 0:
        raise GridError(f"out_side must be odd and >= {side}, got {out_side}")
    c, s = rotation_cos_sin(angle)
    return kernels.rotate_bilinear(image, c, s, out_side)


def rotate_bilinear_adjoint(grad: np.ndarray, angle: AngleLike, in_side: int) -> np.ndarray:
    """Transpose of :func:`rotate_bilinear` as a linear map (for backpropagation)."""
    c, s = rotation_cos_sin(angle)
    return kernels.rotate_bilinear_adjoint(grad, c, s, in_side)


def default_canvas_side(side: int) -> int:
    """Smallest odd integer >= ceil(side * sqrt(2)): room for every rotation."""
    target = 2 * side * side
    c = math.isqrt(target)
    if c * c < target:
        c += 1
    return c if c % 2 else c + 1


def pad_to_canvas(image: np.ndarray, canvas_side: int | None = None) -> np.ndarray:
    image = as_grid(image)
    side = image.shape[0]
    if canvas_side is None:
        canvas_side = default_canvas_side(side)
    if canvas_side % 2 == 0:
        raise GridError(f"canvas side must be odd, got {canvas_side}")
    if canvas_side < side:
        raise GridError(f"canvas side {canvas_side} smaller than grid side {side}")
    if canvas_side == side:
        return image.copy()
    off = (canvas_side - side) // 2
    out = np.zeros((canvas_side, canvas_side))
    out[off:off + side, off:off + side] = image
    return out


# -- P-GRID files -------------------------------------------------------------


def dumps_grid(image: np.ndarray) -> str:
    image = as_grid(image)
    lines = [f"P-GRID {image.shape[0]}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in image]
    return "\n".join(lines) + "\n"


def loads_grid(text: str) -> np.ndarray:
    tokens = text.split()
    if len(tokens) < 2 or tokens[0] != "P-GRID":
        raise GridError("missing 'P-GRID <side>' header")
    side = int(tokens[1])
    values = tokens[2:]
    if len(values) != side * side:
        raise GridError(f"expected {side * side} values, found {len(values)}")
    return as_grid(np.array([float(v) for v in values]).reshape(side, side))


def write_grid(path: Union[str, Path], image: np.ndarray) -> None:
    Path(path).write_text(dumps_grid(image))


def read_grid(path: Union[str, Path]) -> np.ndarray:
    return loads_grid(Path(path).read_text())
