"""Command-line entry point: ``gricnn {consistency,train,gen-data,selftest}``.

Exit codes: 0 success, 1 usage or input error, 2 invariant violation
(including a diverged training run).
"""
from __future__ import annotations

import argparse
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import gri, harness, kernels, selftest, synthdata
from .cnn import Activation, TrainingDiverged
from .grid import GridError

EXIT_OK, EXIT_USAGE, EXIT_VIOLATION = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.replace("-", ",").split(",") if t)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _offsets(text: str) -> tuple[int, ...]:
    if ".." in text:
        lo, hi = text.split("..", 1)
        values = tuple(range(int(lo), int(hi) + 1))
    else:
        values = _int_list(text)
    if not values or any(f < 0 or f > 10 for f in values):
        raise argparse.ArgumentTypeError("offsets must lie in 0..10")
    return values


def _step(text: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"step angle must be a rational like 1 or 1/2, got {text!r}")


def _activation(text: str) -> str:
    try:
        Activation.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))
    return text


def _structure(text: str) -> str:
    if text.upper() not in gri.STRUCTURES:
        raise argparse.ArgumentTypeError(f"structure must be one of ssk, snk, gsk, gnk; got {text!r}")
    return text.upper()


def _add_network_args(p: argparse.ArgumentParser, sides_default: str) -> None:
    p.add_argument("--structure", type=_structure, required=True, help="ssk | snk | gsk | gnk")
    p.add_argument("--step-deg", type=_step, required=True, help="step angle in degrees, e.g. 15 or 1/2")
    p.add_argument("--layers", type=int, default=3, help="number of conv layers")
    p.add_argument("--kernel-sides", type=_int_list, default=None, help=f"e.g. 5,5,5 (default: {sides_default})")
    p.add_argument("--activation", type=_activation, default="sigmoid", help="sigmoid | relu | lrelu:<slope>")
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--flatten-nodes", type=int, default=8)
    p.add_argument("--hidden", type=int, default=0, help="hidden head nodes (0: none)")
    p.add_argument("--side", type=int, default=63, help="image side")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gricnn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s (backend {kernels.BACKEND})")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("consistency", help="run the output-consistency sweep and write a report")
    _add_network_args(c, "drawn per trial from 3..11")
    c.add_argument("--trials", type=int, default=1000)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--params", default="random", help="random | <model checkpoint>")
    c.add_argument("--image", default="synthetic", help="synthetic | <P-GRID file>")
    c.add_argument("--class-mix", type=float, default=0.5, help="fraction of spiculated synthetic images")
    c.add_argument("--offsets", type=_offsets, default=harness.OFFSETS, help="e.g. 0..10 or 0,5,10")
    c.add_argument("--jobs", type=int, default=1, help="worker processes (output is identical for any value)")
    c.add_argument("--out", default="-", help="report path ('-' for stdout)")
    c.add_argument("--format", choices=("csv", "markdown"), default="csv")

    t = sub.add_parser("train", help="train a GRI model on synthetic or listed images")
    _add_network_args(t, "5 per layer")
    t.add_argument("--pools", type=_int_list, default=None, help="average-pool width per layer, e.g. 3,3,1")
    t.add_argument("--canvas", type=int, default=None, help="canvas side (default: smallest odd >= side*sqrt2)")
    t.add_argument("--tie", choices=gri.TIES, default="auto", help="group kernel tying for GSK/GNK")
    t.add_argument("--untied", action="store_true", help="independent kernels per group (no identity guarantee)")
    t.add_argument("--data", default=None, help="dataset manifest from gen-data (default: generate)")
    t.add_argument("--count", type=int, default=64, help="generated training images")
    t.add_argument("--class-mix", type=float, default=0.5)
    t.add_argument("--epochs", type=int, default=50)
    t.add_argument("--lr", type=float, default=0.1)
    t.add_argument("--batch-size", type=int, default=8)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, help="model checkpoint path (.npz)")

    g = sub.add_parser("gen-data", help="write a synthetic lesion dataset")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--class-mix", type=float, default=0.5)
    g.add_argument("--side", type=int, default=63)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out-dir", required=True)

    s = sub.add_parser("selftest", help="run the exact-identity property checks")
    s.add_argument("--seed", type=int, default=0)
    return parser


def _plan(args) -> harness.TrialPlan:
    if args.trials < 0:
        raise UsageError("--trials must be non-negative")
    if args.kernel_sides is not None and len(args.kernel_sides) != args.layers:
        raise UsageError("--kernel-sides must list one side per layer")
    if args.image != "synthetic" and not Path(args.image).is_file():
        raise UsageError(f"image file not found: {args.image}")
    if args.params != "random" and not Path(args.params).is_file():
        raise UsageError(f"checkpoint not found: {args.params}")
    return harness.TrialPlan(
        trial_count=args.trials, seed=args.seed, params=args.params, image=args.image,
        class_mix=args.class_mix, image_side=args.side, layers=args.layers,
        kernel_sides=args.kernel_sides, activation=args.activation, channels=args.channels,
        flatten_nodes=args.flatten_nodes, hidden=args.hidden,
    )


def _write(text: str, out: str) -> None:
    if out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def cmd_consistency(args) -> int:
    plan = _plan(args)
    gear = gri.GearConfig.create(args.structure, args.step_deg)
    report = harness.run_sweep(plan, gear, args.offsets, jobs=args.jobs)
    _write(harness.emit_report(report, args.format), args.out)
    problems = report.violations()
    for line in problems:
        print(f"invariant violation: {line}", file=sys.stderr)
    return EXIT_VIOLATION if problems else EXIT_OK


def cmd_train(args) -> int:
    sides = args.kernel_sides or (5,) * args.layers
    if len(sides) != args.layers:
        raise UsageError("--kernel-sides must list one side per layer")
    if args.epochs < 0 or args.lr < 0 or args.batch_size < 1:
        raise UsageError("epochs and lr must be non-negative, batch size positive")
    if args.data:
        data = synthdata.read_dataset(args.data)
        side = data[0][0].shape[0]
    else:
        data = synthdata.gen_dataset(args.count, args.class_mix, args.seed, args.side)
        side = args.side
    rng = np.random.default_rng([args.seed, 1])
    model = gri.build_model(
        args.structure, args.step_deg, side, sides, rng, activation=args.activation,
        channels=args.channels, flatten_nodes=args.flatten_nodes, hidden=args.hidden,
        pools=args.pools, canvas_side=args.canvas, untied=args.untied, tie=args.tie,
    )
    log = gri.TrainLog()
    try:
        model = gri.train_gri(model, data, args.epochs, args.lr, args.batch_size, args.seed, log)
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    gri.save_model(args.out, model)
    for epoch, loss in enumerate(log.epoch_losses, 1):
        print(f"epoch {epoch} loss {loss:.6f}")
    print(f"saved {args.out} ({model.gear.structure}, step {model.gear.step}, {model.n_free_parameters()} free parameters)")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    if args.count <= 0:
        raise UsageError("--count must be positive")
    items = synthdata.gen_dataset(args.count, args.class_mix, args.seed, args.side)
    manifest = synthdata.write_dataset(args.out_dir, items)
    print(f"wrote {len(items)} images and {manifest}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    results = selftest.run_all(args.seed)
    for r in results:
        print(r.line())
    print(f"backend: {kernels.BACKEND}")
    return EXIT_OK if all(r.ok for r in results) else EXIT_VIOLATION


COMMANDS = {"consistency": cmd_consistency, "train": cmd_train, "gen-data": cmd_gen_data, "selftest": cmd_selftest}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, gri.GearError, GridError, ValueError, OSError) as exc:
        print(f"gricnn {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
