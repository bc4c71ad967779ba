"""Geared rotationally identical networks: SSK, SNK, GSK and GNK.

A gear with step angle ``x`` has ``m = 90 / x`` teeth. Tooth ``n`` sees the
input rotated by ``n * x``; together with the exact quarter-turn/reflection
identity of each tooth the teeth cover the full circle. Sub-channel flatten
vectors are summed (in ascending tooth order) before the shared head, except
for SNK where all ``8m`` input versions are summed at the input layer.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from . import cnn
from .cnn import NetworkParams, StackCache, TrainingDiverged
from .grid import (
    AngleLike,
    as_angle,
    as_grid,
    default_canvas_side,
    pad_to_canvas,
    rotate_bilinear,
    rotate_bilinear_adjoint,
)
from .symmetry import dih4_orbit_sum

STRUCTURES = ("SSK", "SNK", "GSK", "GNK")
SYMMETRIC_STRUCTURES = ("SSK", "GSK")
GROUPED_STRUCTURES = ("GSK", "GNK")
TIES = ("auto", "rotated", "shared")


class GearError(ValueError):
    pass


@dataclass(frozen=True)
class GearConfig:
    structure: str
    step: Fraction

    def __post_init__(self):
        structure = self.structure.upper()
        if structure not in STRUCTURES:
            raise GearError(f"structure must be one of {STRUCTURES}, got {self.structure!r}")
        object.__setattr__(self, "structure", structure)
        step = Fraction(self.step)
        if step <= 0 or step >= 90:
            raise GearError(f"step angle must lie strictly between 0 and 90 degrees, got {step}")
        teeth = Fraction(90) / step
        if teeth.denominator != 1:
            raise GearError(f"90 is not an integer multiple of the step angle {step}")
        object.__setattr__(self, "step", step)

    @classmethod
    def create(cls, structure: str, step: AngleLike) -> "GearConfig":
        if isinstance(step, float):
            step = str(step)
        return cls(structure, Fraction(step))

    @property
    def m(self) -> int:
        return int(Fraction(90) / self.step)

    @property
    def symmetric(self) -> bool:
        return self.structure in SYMMETRIC_STRUCTURES

    @property
    def grouped(self) -> bool:
        return self.structure in GROUPED_STRUCTURES

    @property
    def combine(self) -> str:
        return "input-layer-sum" if self.structure == "SNK" else "flatten-fan-in-sum"

    def tooth_angle(self, n: int) -> Fraction:
        return n * self.step

    def to_dict(self) -> dict:
        return {"structure": self.structure, "step": str(self.step), "m": self.m}


def rotate_kernels(params: NetworkParams, angle: AngleLike) -> NetworkParams:
    """Every conv kernel and flatten template rotated in place (same side)."""
    angle = as_angle(angle)
    if angle == 0:
        return params
    tensors = params.map_grids(lambda g: rotate_bilinear(g, angle))
    return replace(params, symmetric=False).with_tensors(tensors)


def _rotate_grads_back(params: NetworkParams, grads: Sequence[np.ndarray], angle: Fraction) -> list[np.ndarray]:
    # Chain rule through the tying map base -> rotate_kernels(base, angle).
    if angle == 0:
        return list(grads)
    return cnn._map_grid_tensors(
        params, grads, lambda g: rotate_bilinear_adjoint(g, angle, g.shape[0])
    )


@dataclass(frozen=True)
class GriModel:
    gear: GearConfig
    base: NetworkParams
    image_side: int
    group_params: tuple[NetworkParams, ...] = ()
    untied: bool = False
    tie: str = "auto"

    def __post_init__(self):
        if self.tie not in TIES:
            raise GearError(f"tie must be one of {TIES}, got {self.tie!r}")
        if self.base.symmetric != self.gear.symmetric:
            raise GearError(f"{self.gear.structure} needs symmetric={self.gear.symmetric} base params")
        if self.base.input_side < self.image_side or self.base.input_side % 2 == 0:
            raise GearError("canvas side must be odd and at least the image side")
        if self.gear.grouped:
            if not self.group_params:
                object.__setattr__(self, "group_params", derive_groups(self.base, self.gear, self.tie))
            if len(self.group_params) != self.gear.m:
                raise GearError(f"expected {self.gear.m} group parameter sets, got {len(self.group_params)}")
        elif self.group_params:
            raise GearError(f"{self.gear.structure} shares one parameter set; group_params must be empty")

    @property
    def canvas_side(self) -> int:
        return self.base.input_side

    def kernel_angle(self, n: int) -> Fraction:
        return kernel_angle(self.gear, n, self.tie)

    def tooth_params(self, n: int) -> NetworkParams:
        return self.group_params[n] if self.gear.grouped else self.base

    def n_free_parameters(self) -> int:
        if self.untied:
            return sum(p.n_free_parameters() for p in self.group_params)
        return self.base.n_free_parameters()


def resolve_tie(gear: GearConfig, tie: str = "auto") -> str:
    """``auto`` rotates GSK groups by ``n*x`` and shares the base across GNK groups.

    A GNK tooth input is Dih4-invariant, but a reflection sends tooth ``n``'s
    input to tooth ``m-n`` and a step rotation shifts it to tooth ``n+j``. The
    fan-in sum is unchanged under both only when every group computes the
    same function, so rotated non-symmetric groups break both identities.
    """
    if tie == "auto":
        return "shared" if gear.structure == "GNK" else "rotated"
    return tie


def kernel_angle(gear: GearConfig, n: int, tie: str = "auto") -> Fraction:
    """Rotation applied to the base kernels for group ``n``."""
    return gear.tooth_angle(n) if resolve_tie(gear, tie) == "rotated" else Fraction(0)


def derive_groups(base: NetworkParams, gear: GearConfig, tie: str = "auto") -> tuple[NetworkParams, ...]:
    return tuple(rotate_kernels(base, kernel_angle(gear, n, tie)) for n in range(gear.m))


def build_model(
    structure: str,
    step: AngleLike,
    image_side: int,
    kernel_sides: Sequence[int],
    rng: np.random.Generator,
    activation: str = "sigmoid",
    channels: int = 1,
    flatten_nodes: int = 8,
    hidden: int = 0,
    pools: Sequence[int] | None = None,
    canvas_side: int | None = None,
    untied: bool = False,
    tie: str = "auto",
) -> GriModel:
    """Random-initialised model (weights uniform in [-0.5, 0.5))."""
    gear = GearConfig.create(structure, step)
    canvas = canvas_side or default_canvas_side(image_side)
    base = cnn.init_params(
        rng, canvas, kernel_sides, activation, channels, flatten_nodes, hidden, pools, symmetric=gear.symmetric
    )
    groups: tuple = ()
    if gear.grouped and untied:
        groups = (base,) + tuple(
            cnn.init_params(rng, canvas, kernel_sides, activation, channels, flatten_nodes, hidden, pools,
                            symmetric=gear.symmetric)
            for _ in range(gear.m - 1)
        )
    elif untied:
        raise GearError("untied kernels only apply to GSK/GNK")
    return GriModel(gear, base, image_side, groups, untied, tie)


# -- forward ------------------------------------------------------------------


def _to_canvas(image: np.ndarray, canvas_side: int) -> np.ndarray:
    image = as_grid(image)
    if image.shape[0] > canvas_side:
        raise cnn.ShapeError(f"image side {image.shape[0]} exceeds canvas {canvas_side}")
    return pad_to_canvas(image, canvas_side)


def subchannel_inputs(image: np.ndarray, gear: GearConfig, canvas_side: int) -> list[np.ndarray]:
    """Per-tooth network inputs for the given structure."""
    canvas = _to_canvas(image, canvas_side)
    rotated = [rotate_bilinear(canvas, gear.tooth_angle(n)) for n in range(gear.m)]
    if gear.structure in ("SSK", "GSK"):
        return rotated
    orbits = [dih4_orbit_sum(r) for r in rotated]
    if gear.structure == "GNK":
        return orbits
    total = orbits[0]
    for o in orbits[1:]:
        total = total + o
    return [total]


def gri_flatten(image: np.ndarray, model: GriModel, caches: list | None = None) -> np.ndarray:
    """Combined first-flatten-layer vector (sum over teeth, ascending order)."""
    inputs = subchannel_inputs(image, model.gear, model.canvas_side)
    total = None
    for n, x in enumerate(inputs):
        cache = StackCache() if caches is not None else None
        v = cnn.stack_forward(x, model.tooth_params(n), cache)
        if caches is not None:
            caches.append(cache)
        total = v if total is None else total + v
    return total


def forward_gri(image: np.ndarray, model: GriModel) -> np.ndarray:
    return cnn.head_forward(gri_flatten(image, model), model.base)


def baseline_output(image: np.ndarray, model: GriModel) -> np.ndarray:
    """Output on the unrotated, unreflected input (the normalisation reference)."""
    return forward_gri(image, model)


# -- training -----------------------------------------------------------------


def gri_loss_and_grads(model: GriModel, batch) -> tuple[float, list]:
    """Batch MSE and gradients.

    Tied models return one tensor list (base order); untied grouped models
    return one list per group.
    """
    batch = list(batch)
    n_layers = len(model.base.layers)
    groups = model.group_params if model.untied else None
    total = (
        [[np.zeros_like(t) for t in p.tensors()] for p in groups]
        if groups else [np.zeros_like(t) for t in model.base.tensors()]
    )
    loss = 0.0
    for image, label in batch:
        caches: list = []
        v = gri_flatten(image, model, caches)
        trace: list = []
        out = cnn.head_forward(v, model.base, trace)
        err = out - cnn.targets_for(label)
        loss += float(np.mean(err * err))
        head_grads, dv = cnn.head_backward(trace, model.base, err / (err.size * len(batch)) * 2.0)
        for n, cache in enumerate(caches):
            params = model.tooth_params(n)
            grads = cnn.stack_backward(cache, params, dv)
            if groups:
                grads[2 * n_layers + 1:] = head_grads if n == 0 else [np.zeros_like(h) for h in head_grads]
                for acc, g in zip(total[n], grads):
                    acc += g
                continue
            if model.gear.grouped:
                grads = _rotate_grads_back(model.base, grads, model.kernel_angle(n))
            for acc, g in zip(total, grads):
                acc += g
        if not groups:
            for acc, g in zip(total[2 * n_layers + 1:], head_grads):
                acc += g
    return loss / len(batch), total


def _update(model: GriModel, grads, lr: float) -> GriModel:
    if model.untied:
        # Head lives in group 0 (== base); every group keeps its own kernels.
        new_groups = list(cnn.apply_update(p, g, lr) for p, g in zip(model.group_params, grads))
        n_layers = len(model.base.layers)
        head = new_groups[0].tensors()[2 * n_layers + 1:]
        new_groups = [new_groups[0]] + [
            p.with_tensors(p.tensors()[:2 * n_layers + 1] + head) for p in new_groups[1:]
        ]
        return replace(model, base=new_groups[0], group_params=tuple(new_groups))
    base = cnn.apply_update(model.base, grads, lr)
    groups = derive_groups(base, model.gear, model.tie) if model.gear.grouped else ()
    return replace(model, base=base, group_params=groups)


@dataclass
class TrainLog:
    epoch_losses: list = field(default_factory=list)


def gri_sgd_step(model: GriModel, batch, lr: float) -> tuple[GriModel, float]:
    loss, grads = gri_loss_and_grads(model, batch)
    flat = grads if not model.untied else [g for gs in grads for g in gs]
    if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in flat):
        raise TrainingDiverged(f"non-finite loss {loss}")
    if lr == 0:
        return model, loss
    model = _update(model, grads, lr)
    params = model.group_params if model.untied else (model.base,)
    if not all(np.all(np.isfinite(t)) for p in params for t in p.tensors()):
        raise TrainingDiverged(f"non-finite parameters after a step of size {lr}")
    return model, loss


def train_gri(
    model: GriModel,
    data: Iterable,
    epochs: int,
    lr: float,
    batch_size: int = 8,
    seed: int = 0,
    log: TrainLog | None = None,
) -> GriModel:
    """End-to-end SGD through all teeth at once.

    Each epoch shuffles the data with a generator keyed by (seed, epoch).
    Grouped tied models keep ``group_params[n] == rotate_kernels(base, a_n)``
    exactly (``a_n`` from ``kernel_angle``): gradients are pulled back to the base through the transpose of
    the kernel rotation and the groups are re-derived after every step.
    """
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    data = list(data)
    for epoch in range(epochs):
        order = np.random.default_rng([seed, epoch]).permutation(len(data))
        losses = []
        for start in range(0, len(data), batch_size):
            batch = [data[i] for i in order[start:start + batch_size]]
            model, loss = gri_sgd_step(model, batch, lr)
            losses.append(loss * len(batch))
        if log is not None:
            log.epoch_losses.append(sum(losses) / len(data))
    return model


def evaluate_loss(model: GriModel, data) -> float:
    data = list(data)
    total = 0.0
    for image, label in data:
        err = forward_gri(image, model) - cnn.targets_for(label)
        total += float(np.mean(err * err))
    return total / len(data)


def accuracy(model: GriModel, data) -> float:
    data = list(data)
    hits = sum(int(np.argmax(forward_gri(image, model)) == label) for image, label in data)
    return hits / len(data)


# -- model files --------------------------------------------------------------


def save_model(path, model: GriModel) -> None:
    extra = {
        "gear": model.gear.to_dict(),
        "image_side": model.image_side,
        "untied": model.untied,
        "tie": model.tie,
    }
    if not model.untied:
        cnn.save_params(path, model.base, extra)
        return
    meta = {"format": cnn.PARAMS_FORMAT, "version": cnn.PARAMS_VERSION,
            "network": cnn.params_meta(model.base), **extra}
    arrays = {}
    for n, p in enumerate(model.group_params):
        arrays.update(cnn.params_arrays(p, prefix=f"group{n}_"))
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_model(path) -> GriModel:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("format") != cnn.PARAMS_FORMAT or "gear" not in meta:
            raise ValueError(f"{path}: not a GRI model file")
        if meta.get("version") != cnn.PARAMS_VERSION:
            raise ValueError(f"{path}: unsupported version {meta.get('version')}")
        gear = GearConfig.create(meta["gear"]["structure"], meta["gear"]["step"])
        if meta.get("untied"):
            groups = tuple(cnn.params_from(meta["network"], data, prefix=f"group{n}_") for n in range(gear.m))
            return GriModel(gear, groups[0], int(meta["image_side"]), groups, True, meta.get("tie", "auto"))
        base = cnn.params_from(meta["network"], data)
    return GriModel(gear, base, int(meta["image_side"]), tie=meta.get("tie", "auto"))
