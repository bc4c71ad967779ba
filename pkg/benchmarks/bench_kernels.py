"""Compare the compiled and pure-Python kernel backends.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--side S]

Prints median wall time per call for each kernel and backend, the speed-up,
and the largest elementwise difference between the backends.
"""
from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from gricnn import kernels
from gricnn.grid import rotation_cos_sin


def _time(fn, repeat: int) -> float:
    fn()
    samples = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def cases(side: int, rng: np.random.Generator) -> dict:
    image = rng.random((side, side))
    kernel = rng.uniform(-0.5, 0.5, (7, 7))
    c, s = rotation_cos_sin("17")
    out = side + 2 * (side // 3) | 1
    rotated = rng.random((out, out))
    return {
        "conv_same 7x7": lambda b: b.conv_same(image, kernel),
        "conv_kernel_grad 7x7": lambda b: b.conv_kernel_grad(image, image, 7),
        "rotate_bilinear": lambda b: b.rotate_bilinear(image, c, s, out),
        "rotate_bilinear_adjoint": lambda b: b.rotate_bilinear_adjoint(rotated, c, s, side),
    }


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    parser.add_argument("--side", type=int, default=91)
    args = parser.parse_args(argv)

    impls = kernels.backends()
    print(f"default backend: {kernels.BACKEND}; available: {', '.join(impls)}; side {args.side}")
    if "compiled" not in impls:
        print("compiled extension not built; timing the Python backend only")
    rng = np.random.default_rng(0)
    print(f"{'kernel':26s} " + " ".join(f"{name:>12s}" for name in impls) + "   speed-up  max |diff|")
    for label, call in cases(args.side, rng).items():
        times = {name: _time(lambda: call(b), args.repeat) for name, b in impls.items()}
        results = [call(b) for b in impls.values()]
        diff = max((float(np.max(np.abs(results[0] - r))) for r in results[1:]), default=0.0)
        speedup = times["python"] / times["compiled"] if "compiled" in times else float("nan")
        cells = " ".join(f"{times[name] * 1e3:10.3f}ms" for name in impls)
        print(f"{label:26s} {cells}   {speedup:7.1f}x  {diff:.1e}")


if __name__ == "__main__":
    main()
