"""Two-class synthetic lesion images (smooth vs spiculated blobs).

Stand-in data for consistency runs and training. All content lies strictly
inside the inscribed disc so rotations about the centre never clip it.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import read_grid, write_grid

CLASSES = ("smooth", "spiculated")
# Gaussian point spread (pixels) applied before the taper. Without it the
# thinnest spokes are narrower than a pixel and every resampling aliases them.
PSF_SIGMA = 1.5


@dataclass(frozen=True)
class LesionSpec:
    kind: str = "smooth"
    side: int = 63
    seed: int = 0

    def __post_init__(self):
        if self.kind not in CLASSES:
            raise ValueError(f"class must be one of {CLASSES}, got {self.kind!r}")
        if self.side < 9 or self.side % 2 == 0:
            raise ValueError(f"side must be odd and >= 9, got {self.side}")

    @property
    def label(self) -> int:
        return CLASSES.index(self.kind)


def gen_lesion(spec: LesionSpec) -> np.ndarray:
    """Radially correlated blob; spiculated lesions add 5-12 angular spokes."""
    rng = np.random.default_rng(spec.seed)
    side = spec.side
    c = (side - 1) / 2
    y, x = np.mgrid[0:side, 0:side].astype(np.float64)
    x, y = x - c, c - y
    r = np.hypot(x, y)
    phi = np.arctan2(y, x)

    radius = rng.uniform(0.18, 0.28) * c
    ecc = rng.uniform(0.0, 0.35)
    theta = rng.uniform(0.0, np.pi)
    amp = rng.uniform(0.7, 1.0)
    u = x * np.cos(theta) + y * np.sin(theta)
    v = -x * np.sin(theta) + y * np.cos(theta)
    rho2 = (u / (radius * (1 + ecc))) ** 2 + (v / (radius / (1 + ecc))) ** 2
    img = amp * np.exp(-rho2)

    if spec.kind == "spiculated":
        count = int(rng.integers(5, 13))
        phase = rng.uniform(0.0, 2 * np.pi)
        reach = rng.uniform(0.7, 0.9) * c
        strength = rng.uniform(0.6, 1.0)
        spokes = np.maximum(np.cos(count * (phi - phase)), 0.0) ** 4
        radial = np.clip((r - 0.5 * radius) / (0.5 * radius), 0.0, 1.0) * np.exp(-((r / reach) ** 4))
        img = img + strength * spokes * radial

    img = _blur(img, PSF_SIGMA)

    # Smooth taper to exactly zero a few pixels inside the inscribed disc.
    outer = c - 1.0
    inner = outer - max(3.0, 0.12 * c)
    taper = np.clip((outer - r) / (outer - inner), 0.0, 1.0)
    taper = 0.5 - 0.5 * np.cos(np.pi * taper)
    return np.clip(img * taper, 0.0, 1.0)


def _blur(img: np.ndarray, sigma: float) -> np.ndarray:
    # 4-sigma support, cut to the image so ``mode="same"`` keeps the side
    half = min(int(np.ceil(4 * sigma)), img.shape[0] // 2)
    t = np.arange(-half, half + 1, dtype=np.float64)
    w = np.exp(-0.5 * (t / sigma) ** 2)
    w /= w.sum()
    img = np.apply_along_axis(np.convolve, 0, img, w, mode="same")
    return np.apply_along_axis(np.convolve, 1, img, w, mode="same")


def _item_seed(seed: int, index: int) -> int:
    state = np.random.SeedSequence([seed, index]).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 32 | int(state[1])


def gen_dataset(count: int, mix: float = 0.5, seed: int = 0, side: int = 63) -> list[tuple[np.ndarray, int]]:
    """``count`` labelled images; ``round(count*mix)`` of them spiculated (label 1).

    Labels are shuffled deterministically; image ``i`` is generated from a
    seed derived from ``(seed, i)``.
    """
    if count <= 0:
        raise ValueError("count must be positive")
    if not 0.0 <= mix <= 1.0:
        raise ValueError("class mix must lie in [0, 1]")
    n_spic = int(round(count * mix))
    labels = np.array([1] * n_spic + [0] * (count - n_spic))
    labels = np.random.default_rng([seed, count]).permutation(labels)
    return [
        (gen_lesion(LesionSpec(CLASSES[lab], side, _item_seed(seed, i))), int(lab))
        for i, lab in enumerate(labels)
    ]


def write_dataset(out_dir, items) -> Path:
    """Write each image as a P-GRID file plus ``manifest.txt`` (``label,path`` lines)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, (image, label) in enumerate(items):
        name = f"img_{i:05d}.pgrid"
        write_grid(out / name, image)
        lines.append(f"{label},{name}")
    manifest = out / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def read_dataset(manifest) -> list[tuple[np.ndarray, int]]:
    manifest = Path(manifest)
    items = []
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        label, _, rel = line.partition(",")
        path = Path(rel)
        items.append((read_grid(path if path.is_absolute() else manifest.parent / path), int(label)))
    return items
