"""Exact-identity property checks, runnable without pytest.

Each check draws its own seeded cases and returns the largest deviation seen
next to the bound it must respect.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import gri, kernels
from .grid import ELEMENTS, Dih4Element, apply_dih4, rotate_bilinear
from .symmetry import combine_at_end, dih4_orbit_sum, is_dih4_invariant, symmetrize_kernel


@dataclass(frozen=True)
class CheckResult:
    name: str
    worst: float
    bound: float
    cases: int

    @property
    def ok(self) -> bool:
        return self.worst <= self.bound

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        return f"{status} {self.name}: worst {self.worst:.3e} (bound {self.bound:.0e}, {self.cases} cases)"


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300)))


def check_dih4_identity(cases: int = 8, seed: int = 0) -> CheckResult:
    """Every structure's output is unchanged by all 8 quarter-turn/reflection transforms."""
    worst = 0.0
    for k in range(cases):
        rng = np.random.default_rng([seed, k])
        structure = gri.STRUCTURES[k % 4]
        side = int(rng.choice([9, 11, 13]))
        sides = tuple(int(s) for s in rng.choice([3, 5], size=2))
        model = gri.build_model(structure, "30", side, sides, rng)
        image = rng.random((side, side))
        base = gri.forward_gri(image, model)
        for g in ELEMENTS[1:]:
            worst = max(worst, _rel(gri.forward_gri(apply_dih4(g, image), model), base))
    return CheckResult("Dih4 output identity", worst, 1e-9, cases * 7)


def check_orbit_commutation(cases: int = 50, seed: int = 0) -> CheckResult:
    """conv(orbit_sum(I), K) equals the sum of the 8 separate convolutions."""
    worst = 0.0
    for k in range(cases):
        rng = np.random.default_rng([seed, k])
        side = int(rng.choice([5, 7, 9, 15]))
        ks = int(rng.choice([3, 5]))
        image, kernel = rng.uniform(-1, 1, (side, side)), rng.uniform(-0.5, 0.5, (ks, ks))
        a = kernels.conv_same(dih4_orbit_sum(image), kernel)
        worst = max(worst, float(np.max(np.abs(a - combine_at_end(image, kernel)))))
    return CheckResult("orbit-sum convolution commutes", worst, 1e-12, cases)


def check_symmetrize(cases: int = 50, seed: int = 0) -> CheckResult:
    """Symmetrized kernels are exactly invariant and the projection is idempotent."""
    worst = 0.0
    for k in range(cases):
        rng = np.random.default_rng([seed, k])
        ks = int(rng.choice([3, 5, 7, 9, 11]))
        s = symmetrize_kernel(rng.uniform(-0.5, 0.5, (ks, ks)))
        if not is_dih4_invariant(s):
            worst = max(worst, 1.0)
        worst = max(worst, float(np.max(np.abs(symmetrize_kernel(s) - s))))
    return CheckResult("symmetrize is an exact projection", worst, 0.0, cases)


def check_rotation_commutes(cases: int = 20, seed: int = 0) -> CheckResult:
    """Bilinear rotation commutes with every Dih4 element (reflections negate the angle)."""
    worst = 0.0
    for k in range(cases):
        rng = np.random.default_rng([seed, k])
        side = int(rng.choice([7, 9, 11]))
        image = rng.random((side, side))
        angle = str(int(rng.integers(1, 360)))
        for g in ELEMENTS:
            turned = "-" + angle if g.reflected else angle
            a = apply_dih4(g, rotate_bilinear(image, angle))
            b = rotate_bilinear(apply_dih4(g, image), turned)
            worst = max(worst, float(np.max(np.abs(a - b))))
    return CheckResult("rotation commutes with Dih4", worst, 0.0, cases * 8)


def check_quarter_turns(cases: int = 10, seed: int = 0) -> CheckResult:
    """Rotating by a multiple of 90 degrees is the exact index permutation."""
    worst = 0.0
    for k in range(cases):
        rng = np.random.default_rng([seed, k])
        side = int(rng.choice([5, 9, 13]))
        image = rng.random((side, side))
        for q in range(4):
            a = rotate_bilinear(image, str(90 * q))
            worst = max(worst, float(np.max(np.abs(a - apply_dih4(Dih4Element(q, False), image)))))
    return CheckResult("quarter turns are exact", worst, 0.0, cases * 4)


CHECKS: tuple[Callable[..., CheckResult], ...] = (
    check_dih4_identity,
    check_orbit_commutation,
    check_symmetrize,
    check_rotation_commutes,
    check_quarter_turns,
)


def run_all(seed: int = 0) -> list[CheckResult]:
    return [check(seed=seed) for check in CHECKS]
