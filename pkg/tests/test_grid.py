import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gricnn.grid import (
    ELEMENTS,
    FLIP,
    IDENTITY,
    R90,
    Dih4Element,
    GridError,
    apply_dih4,
    as_angle,
    compose,
    default_canvas_side,
    dumps_grid,
    inverse,
    loads_grid,
    pad_to_canvas,
    read_grid,
    rotate_bilinear,
    rotate_bilinear_adjoint,
    rotation_cos_sin,
    write_grid,
)

odd_sides = st.sampled_from([1, 3, 5, 7, 9, 11])
elements = st.sampled_from(ELEMENTS)


def grid_of(side, seed):
    return np.random.default_rng(seed).uniform(-1, 1, (side, side))


# -- Dih4 ---------------------------------------------------------------------


def test_quarter_turn_is_counter_clockwise():
    image = np.arange(9.0).reshape(3, 3)
    # top-right corner moves to top-left under a CCW quarter turn
    assert apply_dih4(R90, image)[0, 0] == image[0, 2]
    np.testing.assert_array_equal(apply_dih4(FLIP, image), image[:, ::-1])


def test_reflect_then_rotate_order():
    image = np.arange(9.0).reshape(3, 3)
    np.testing.assert_array_equal(apply_dih4(Dih4Element(1, True), image), np.rot90(image[:, ::-1]))


def test_compose_table_examples():
    assert compose(R90, FLIP) == Dih4Element(1, True)
    assert compose(FLIP, R90) == Dih4Element(3, True)
    assert compose(Dih4Element(1, False), Dih4Element(0, True)) == Dih4Element(1, True)


def test_group_has_eight_distinct_actions():
    image = grid_of(5, 0)
    images = {apply_dih4(g, image).tobytes() for g in ELEMENTS}
    assert len(images) == 8


@settings(max_examples=60, deadline=None)
@given(elements, elements, odd_sides, st.integers(0, 2**32 - 1))
def test_compose_matches_action(g1, g2, side, seed):
    image = grid_of(side, seed)
    np.testing.assert_array_equal(
        apply_dih4(compose(g1, g2), image), apply_dih4(g1, apply_dih4(g2, image))
    )


@settings(max_examples=40, deadline=None)
@given(elements, odd_sides, st.integers(0, 2**32 - 1))
def test_inverse_undoes(g, side, seed):
    image = grid_of(side, seed)
    assert compose(g, inverse(g)) == IDENTITY
    np.testing.assert_array_equal(apply_dih4(inverse(g), apply_dih4(g, image)), image)


def test_group_closed_and_associative():
    for a in ELEMENTS:
        for b in ELEMENTS:
            assert compose(a, b) in ELEMENTS
            for c in ELEMENTS:
                assert compose(compose(a, b), c) == compose(a, compose(b, c))


# -- angles -------------------------------------------------------------------


def test_angles_are_exact_fractions():
    assert as_angle("1/2") == Fraction(1, 2)
    assert as_angle(0.1) == Fraction(1, 10)
    assert as_angle(-90) == 270
    assert as_angle(720) == 0


def test_cos_sin_special_values():
    assert rotation_cos_sin(0) == (1.0, 0.0)
    assert rotation_cos_sin(90) == (0.0, 1.0)
    c, s = rotation_cos_sin(45)
    assert c == s == math.sqrt(0.5)


@settings(max_examples=200, deadline=None)
@given(st.fractions(min_value=0, max_value=360, max_denominator=50))
def test_cos_sin_symmetries_are_bit_exact(a):
    c, s = rotation_cos_sin(a)
    cm, sm = rotation_cos_sin(-a)
    assert cm == c and sm == -s
    cq, sq = rotation_cos_sin(a + 90)
    assert cq == -s and sq == c
    assert abs(c - math.cos(math.radians(float(a)))) < 1e-15
    assert abs(s - math.sin(math.radians(float(a)))) < 1e-15


# -- rotation -----------------------------------------------------------------


def test_rotate_zero_is_identity():
    image = grid_of(7, 1)
    np.testing.assert_array_equal(rotate_bilinear(image, 0), image)


def test_rotate_quarter_turns_are_permutations():
    image = grid_of(9, 2)
    for q in range(4):
        np.testing.assert_array_equal(rotate_bilinear(image, 90 * q), apply_dih4(Dih4Element(q, False), image))


def test_rotate_center_pixel_fixed():
    image = np.zeros((5, 5))
    image[2, 2] = 1.0
    for a in ("10", "33", "45", "71"):
        assert rotate_bilinear(image, a)[2, 2] == 1.0


def test_rotate_delta_mass_can_grow():
    # Destination-driven bilinear resampling is not mass preserving: a centred
    # delta lands in the tent footprint of several output pixels.
    image = np.zeros((9, 9))
    image[4, 4] = 1.0
    r = rotate_bilinear(image, 45)
    assert r.sum() > 1.0
    assert r[4, 4] == 1.0


def test_rotate_small_angle_hand_oracle():
    # 3x3 with a single pixel right of centre; rotate by 90 moves it above centre
    image = np.zeros((3, 3))
    image[1, 2] = 1.0
    r = rotate_bilinear(image, 90)
    assert r[0, 1] == 1.0 and r.sum() == 1.0


def test_rotate_onto_larger_canvas():
    image = grid_of(5, 3)
    r = rotate_bilinear(image, 0, out_side=9)
    np.testing.assert_array_equal(r, pad_to_canvas(image, 9))


def test_rotate_rejects_bad_canvas():
    with pytest.raises(GridError):
        rotate_bilinear(grid_of(5, 0), 10, out_side=3)
    with pytest.raises(GridError):
        rotate_bilinear(grid_of(5, 0), 10, out_side=8)


@settings(max_examples=60, deadline=None)
@given(elements, st.sampled_from([5, 7, 9]), st.fractions(0, 360, max_denominator=20), st.integers(0, 2**32 - 1))
def test_rotation_commutes_with_dih4_bit_exactly(g, side, angle, seed):
    image = grid_of(side, seed)
    turned = -angle if g.reflected else angle
    np.testing.assert_array_equal(
        apply_dih4(g, rotate_bilinear(image, angle)), rotate_bilinear(apply_dih4(g, image), turned)
    )


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([5, 7]), st.sampled_from([7, 9, 11]), st.fractions(0, 360, max_denominator=12),
       st.integers(0, 2**32 - 1))
def test_adjoint_is_transpose(side, out_side, angle, seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, (side, side))
    y = rng.uniform(-1, 1, (out_side, out_side))
    lhs = float(np.sum(rotate_bilinear(x, angle, out_side) * y))
    rhs = float(np.sum(x * rotate_bilinear_adjoint(y, angle, side)))
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


def test_disc_content_stays_inside_disc():
    side = 21
    c = side // 2
    yy, xx = np.mgrid[0:side, 0:side]
    r = np.hypot(yy - c, xx - c)
    image = np.where(r <= c - 2, 1.0, 0.0)
    for a in ("7", "30", "45", "61"):
        out = rotate_bilinear(image, a)
        assert np.all(out[r > c] == 0.0)


# -- canvas -------------------------------------------------------------------


def test_default_canvas_examples():
    assert default_canvas_side(33) == 47
    assert default_canvas_side(63) == 91
    assert default_canvas_side(1) == 3


@given(st.integers(1, 500).map(lambda n: 2 * n + 1))
def test_default_canvas_is_minimal_odd(side):
    c = default_canvas_side(side)
    assert c % 2 == 1 and c * c >= 2 * side * side
    assert (c - 2) ** 2 < 2 * side * side


def test_pad_centres_image():
    out = pad_to_canvas(np.ones((3, 3)), 5)
    assert out.sum() == 9 and out[0].sum() == 0 and out[2, 2] == 1


def test_pad_rejects_even_and_small():
    with pytest.raises(GridError):
        pad_to_canvas(np.ones((3, 3)), 4)
    with pytest.raises(GridError):
        pad_to_canvas(np.ones((5, 5)), 3)


def test_grid_validation():
    with pytest.raises(GridError):
        rotate_bilinear(np.ones((2, 2)), 0)
    with pytest.raises(GridError):
        rotate_bilinear(np.ones((3, 5)), 0)


# -- P-GRID -------------------------------------------------------------------


def test_pgrid_text_format():
    text = dumps_grid(np.array([[0.0, 0.5, 1.0], [1e-300, -2.0, 3.25], [0.1, 0.2, 0.3]]))
    lines = text.splitlines()
    assert lines[0] == "P-GRID 3"
    assert len(lines) == 4 and lines[1].split() == ["0.0", "0.5", "1.0"]


@settings(max_examples=30, deadline=None)
@given(odd_sides, st.integers(0, 2**32 - 1))
def test_pgrid_round_trip_is_exact(side, seed):
    image = grid_of(side, seed) * 1e3
    np.testing.assert_array_equal(loads_grid(dumps_grid(image)), image)


def test_pgrid_file_round_trip(tmp_path):
    image = grid_of(5, 4)
    write_grid(tmp_path / "a.pgrid", image)
    np.testing.assert_array_equal(read_grid(tmp_path / "a.pgrid"), image)


@pytest.mark.parametrize("text", ["", "GRID 3\n1 2 3", "P-GRID 2\n1 2 3 4", "P-GRID 3\n1 2"])
def test_pgrid_rejects_malformed(text):
    with pytest.raises(GridError):
        loads_grid(text)
