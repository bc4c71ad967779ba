"""Output-consistency protocol: seeded trials, baseline normalisation, tables.

One trial fixes a parameter set, an image, a quarter-turn count ``i``, a tooth
``n`` and a reflection flag; the sweep then presents the image at
``i*90 + n*x + f*x/10`` degrees for every offset ``f`` and compares the
outputs with the baseline output on the unrotated image.

Row ``f = 0`` is the baseline row: the image is presented only through its
Dih4 counterpart (``i`` quarter turns, optional reflection), which must
reproduce the baseline to rounding.
"""
from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Sequence

import numpy as np

from . import gri, kernels
from .grid import Dih4Element, apply_dih4, default_canvas_side, pad_to_canvas, read_grid, rotate_bilinear
from .gri import GearConfig, GriModel
from .synthdata import CLASSES, LesionSpec, gen_lesion

KERNEL_SIDES = (3, 5, 7, 9, 11)
BUCKET_EDGES = (0.01, 0.02, 0.03, 0.04, 0.05)
BUCKET_NAMES = ("lt_1pct", "lt_2pct", "lt_3pct", "lt_4pct", "lt_5pct", "ge_5pct")
DEGENERATE_BASELINE = 1e-12
OFFSETS = tuple(range(11))


@dataclass(frozen=True)
class TestAngleSpec:
    i: int
    n: int
    f: int
    reflect: bool

    __test__ = False  # not a pytest class

    def angle(self, step: Fraction) -> Fraction:
        return 90 * self.i + self.n * step + self.f * step / 10


@dataclass(frozen=True)
class TrialPlan:
    """Everything that determines a sweep; ``(seed, index)`` fixes each trial."""

    trial_count: int = 1000
    seed: int = 0
    params: str = "random"  # or a model checkpoint path
    image: str = "synthetic"  # or a P-GRID file path
    class_mix: float = 0.5
    image_side: int = 63
    layers: int = 3
    kernel_sides: tuple[int, ...] | None = None  # None: drawn per trial from 3..11
    activation: str = "sigmoid"
    channels: int = 1
    flatten_nodes: int = 8
    hidden: int = 0

    @cached_property
    def checkpoint(self) -> GriModel | None:
        return None if self.params == "random" else gri.load_model(self.params)

    @cached_property
    def fixed_image(self) -> np.ndarray | None:
        return None if self.image == "synthetic" else read_grid(self.image)

    def echo(self, gear: GearConfig) -> dict:
        ckpt = self.checkpoint
        if ckpt is None:
            layers, activation, channels, nodes = self.layers, self.activation, self.channels, self.flatten_nodes
            sides = "random" if self.kernel_sides is None else "-".join(map(str, self.kernel_sides))
            tie = "auto"
        else:
            layers, activation = len(ckpt.base.layers), str(ckpt.base.layers[0].activation)
            channels, nodes = ckpt.base.layers[0].out_channels, ckpt.base.templates.shape[1]
            sides = "-".join(str(spec.kernel_side) for spec in ckpt.base.layers)
            tie = ckpt.tie
        echo = {
            "structure": gear.structure,
            "step_deg": str(gear.step),
            "teeth": gear.m,
            "layers": layers,
            "kernel_sides": sides,
            "activation": activation,
            "channels": channels,
            "flatten_nodes": nodes,
            "params": self.params,
            "image": self.image,
            "image_side": self.image_side if ckpt is None else ckpt.image_side,
            "canvas_side": default_canvas_side(self.image_side) if ckpt is None else ckpt.canvas_side,
            "rotation": "bilinear, counterclockwise positive",
            "class_mix": self.class_mix,
            "seed": self.seed,
            "trials": self.trial_count,
            "backend": kernels.BACKEND,
        }
        if gear.grouped:
            echo["group_tie"] = "untied" if ckpt is not None and ckpt.untied else gri.resolve_tie(gear, tie)
        return echo


@dataclass
class Trial:
    index: int
    model: GriModel
    image: np.ndarray  # already on the model canvas
    i: int
    n: int
    reflect: bool
    _baseline: np.ndarray | None = None

    def spec(self, f: int) -> TestAngleSpec:
        return TestAngleSpec(self.i, self.n, f, self.reflect)

    @property
    def baseline(self) -> np.ndarray:
        if self._baseline is None:
            self._baseline = gri.baseline_output(self.image, self.model)
        return self._baseline


@dataclass(frozen=True)
class TrialResult:
    normalized: np.ndarray
    deviation: np.ndarray
    absolute_deviation: np.ndarray
    baseline_magnitude: float
    degenerate: bool

    @property
    def worst(self) -> float:
        return float(np.max(np.abs(self.deviation)))


def trial_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based generator keyed by (seed, index)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, index])))


def make_trial(plan: TrialPlan, gear: GearConfig, index: int) -> Trial:
    rng = trial_rng(plan.seed, index)
    i = int(rng.integers(0, 4))
    n = int(rng.integers(0, gear.m))
    reflect = bool(rng.integers(0, 2))
    if plan.checkpoint is not None:
        model = plan.checkpoint
        if model.gear != gear:
            raise ValueError(f"checkpoint gear {model.gear} does not match requested {gear}")
    else:
        sides = plan.kernel_sides or tuple(int(k) for k in rng.choice(KERNEL_SIDES, size=plan.layers))
        model = gri.build_model(
            gear.structure, gear.step, plan.image_side, sides, rng,
            activation=plan.activation, channels=plan.channels,
            flatten_nodes=plan.flatten_nodes, hidden=plan.hidden,
        )
    if plan.fixed_image is not None:
        image = plan.fixed_image
    else:
        kind = CLASSES[int(rng.random() < plan.class_mix)]
        image = gen_lesion(LesionSpec(kind, model.image_side, int(rng.integers(0, 2**63))))
    return Trial(index, model, pad_to_canvas(image, model.canvas_side), i, n, reflect)


def present(trial: Trial, spec: TestAngleSpec) -> np.ndarray:
    """Optional reflection, then rotation by the test angle on the canvas."""
    image = apply_dih4(Dih4Element(0, spec.reflect), trial.image)
    return rotate_bilinear(image, spec.angle(trial.model.gear.step))


def compare(output: np.ndarray, baseline: np.ndarray) -> TrialResult:
    magnitude = float(np.min(np.abs(baseline)))
    degenerate = magnitude < DEGENERATE_BASELINE
    with np.errstate(divide="ignore", invalid="ignore"):
        normalized = output / baseline
    return TrialResult(normalized, normalized - 1.0, np.abs(output - baseline), magnitude, degenerate)


def run_trial(trial: Trial, spec: TestAngleSpec) -> TrialResult:
    return compare(gri.forward_gri(present(trial, spec), trial.model), trial.baseline)


def _sweep_one(args) -> list[TrialResult]:
    plan, gear, index, offsets = args
    trial = make_trial(plan, gear, index)
    results = []
    for f in offsets:
        spec = trial.spec(f) if f else TestAngleSpec(trial.i, 0, 0, trial.reflect)
        results.append(run_trial(trial, spec))
    return results


# -- reports ------------------------------------------------------------------


@dataclass
class ReportRow:
    f: int
    offset: Fraction
    trials: int
    degenerate: int
    mean: float
    max_diff: float
    min_diff: float
    mse: float
    median_abs: float
    buckets: tuple[int, ...]
    within_half_pct: int

    @classmethod
    def aggregate(cls, f: int, step: Fraction, results: Sequence[TrialResult]) -> "ReportRow":
        good = [r for r in results if not r.degenerate]
        buckets = [0] * len(BUCKET_NAMES)
        for r in good:
            buckets[int(np.searchsorted(BUCKET_EDGES, r.worst, side="right"))] += 1
        if good:
            dev = np.concatenate([r.deviation for r in good])
            norm = np.concatenate([r.normalized for r in good])
            worst = np.array([r.worst for r in good])
            stats = (float(norm.mean()), float(dev.max()), float(dev.min()), float(np.mean(dev * dev)),
                     float(np.median(worst)), int(np.sum(worst < 0.005)))
        else:
            stats = (float("nan"),) * 5 + (0,)
        return cls(f, f * step / 10, len(results), len(results) - len(good), *stats[:5], tuple(buckets), stats[5])


@dataclass
class ConsistencyReport:
    config: dict
    rows: list[ReportRow] = field(default_factory=list)

    def row(self, f: int) -> ReportRow:
        for r in self.rows:
            if r.f == f:
                return r
        raise KeyError(f)

    def violations(self) -> list[str]:
        """Harness invariants: bucket conservation and an exact baseline row."""
        out = []
        for r in self.rows:
            if sum(r.buckets) + r.degenerate != r.trials:
                out.append(f"row f={r.f}: buckets do not sum to trial count")
            if r.f == 0 and r.trials > r.degenerate and max(abs(r.max_diff), abs(r.min_diff)) > 1e-9:
                out.append(f"baseline row deviates by {max(abs(r.max_diff), abs(r.min_diff)):.3e}")
        return out


def run_sweep(
    plan: TrialPlan,
    gear: GearConfig,
    offsets: Sequence[int] = OFFSETS,
    jobs: int = 1,
) -> ConsistencyReport:
    """Run ``plan.trial_count`` trials at every offset; aggregate by trial index."""
    offsets = list(offsets)
    report = ConsistencyReport(plan.echo(gear))
    if plan.trial_count == 0:
        return report
    work = [(plan, gear, k, offsets) for k in range(plan.trial_count)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_trial = list(pool.map(_sweep_one, work, chunksize=max(1, len(work) // (4 * jobs))))
    else:
        per_trial = [_sweep_one(w) for w in work]
    for col, f in enumerate(offsets):
        report.rows.append(ReportRow.aggregate(f, gear.step, [t[col] for t in per_trial]))
    return report


COLUMNS = (
    "f", "offset_deg", "test_angle", "trials", "degenerate",
    "mean", "max_diff", "min_diff", "mse",
) + BUCKET_NAMES + ("within_0.5pct", "median_abs_dev")


def _angle_label(f: int, step: Fraction) -> str:
    if f == 0:
        return f"RR{{RAN{{i}}*90}}"
    return f"RR{{RAN{{i}}*90+RAN{{n}}*{float(step):.5f}+{float(f * step / 10):.5f}}}"


def _num(x: float, fmt: str) -> str:
    return "N/A" if np.isnan(x) else format(x, fmt)


def _row_cells(row: ReportRow, step: Fraction) -> list[str]:
    return [
        str(row.f), f"{float(row.offset):.5f}", _angle_label(row.f, step), str(row.trials), str(row.degenerate),
        _num(row.mean, ".5f"), _num(row.max_diff, ".5f"), _num(row.min_diff, ".5f"), _num(row.mse, ".3e"),
        *map(str, row.buckets), str(row.within_half_pct), _num(row.median_abs, ".3e"),
    ]


def emit_report(report: ConsistencyReport, fmt: str = "csv") -> str:
    step = Fraction(report.config.get("step_deg", "1"))
    if fmt == "csv":
        buf = io.StringIO()
        for key, value in report.config.items():
            buf.write(f"# {key}={value}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(COLUMNS)
        for row in report.rows:
            writer.writerow(_row_cells(row, step))
        return buf.getvalue()
    if fmt == "markdown":
        lines = [f"- {key}: {value}" for key, value in report.config.items()]
        lines += ["", "| " + " | ".join(COLUMNS) + " |", "|" + "---|" * len(COLUMNS)]
        lines += ["| " + " | ".join(_row_cells(row, step)) + " |" for row in report.rows]
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def parse_report_csv(text: str) -> tuple[dict, list[dict]]:
    """Inverse of the CSV emitter: (config echo, rows as dicts of strings)."""
    config = {}
    body = []
    for line in text.splitlines():
        if line.startswith("# "):
            key, _, value = line[2:].partition("=")
            config[key] = value
        else:
            body.append(line)
    return config, list(csv.DictReader(body))


def median_shift(a: ConsistencyReport, b: ConsistencyReport, f: int) -> float:
    """How much smaller row ``f``'s median |deviation| is in ``a`` than in ``b``."""
    return b.row(f).median_abs - a.row(f).median_abs


def monotonicity_diagnostics(checks: Sequence[tuple[str, ConsistencyReport, ConsistencyReport]], f: int = 5) -> list[str]:
    """Flag lines for expected orderings ``(label, better, worse)``; never raises."""
    lines = []
    for label, better, worse in checks:
        ok = better.row(f).median_abs < worse.row(f).median_abs
        lines.append(
            f"{'ok  ' if ok else 'FLAG'} {label}: median |dev| {better.row(f).median_abs:.3e} "
            f"vs {worse.row(f).median_abs:.3e} at f={f}"
        )
    return lines
