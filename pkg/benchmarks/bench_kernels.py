"""Time the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--csv out.csv]

Shapes follow the toy configuration: a base width of 16 at 32x32 pixels
for the depthwise convolution and 1024-step scans for the selective scan.
"""
from __future__ import annotations

import argparse
import csv
import sys
import timeit

import numpy as np

from hybrid_ens.tensor import kernels


def scan_args(rng, n=2, d=16, L=1024, s=8):
    x = rng.normal(size=(n, d, L))
    delta = rng.uniform(0.01, 0.2, size=(n, d, L))
    A = -rng.uniform(0.5, 2.0, size=(d, s))
    Bt = np.ascontiguousarray(rng.normal(size=(n, L, s)))
    Ct = np.ascontiguousarray(rng.normal(size=(n, L, s)))
    return x, delta, A, Bt, Ct


def cases(rng):
    x = rng.normal(size=(4, 16, 32, 32))
    k = rng.normal(size=(16, 3, 3))
    g = rng.normal(size=x.shape)
    sx, sd, sA, sB, sC = scan_args(rng)
    y, hs, decay = kernels.python_backend.scan_forward(sx, sd, sA, sB, sC)
    gy = rng.normal(size=y.shape)
    return {
        "dwconv3x3_forward": lambda m: m.dwconv3x3_forward(x, k),
        "dwconv3x3_backward": lambda m: m.dwconv3x3_backward(g, x, k),
        "scan_forward": lambda m: m.scan_forward(sx, sd, sA, sB, sC),
        "scan_backward": lambda m: m.scan_backward(gy, sx, sd, sA, sB, sC, hs, decay),
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--csv", help="also write the table as CSV")
    args = ap.parse_args(argv)

    backends = {"python": kernels.python_backend}
    if kernels.compiled_backend is not None:
        backends["cython"] = kernels.compiled_backend
    else:
        print("compiled extension not built; timing the fallback only", file=sys.stderr)

    rng = np.random.default_rng(0)
    rows = []
    for name, fn in cases(rng).items():
        times = {}
        for label, mod in backends.items():
            fn(mod)  # warm-up
            times[label] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat))
        speedup = times["python"] / times["cython"] if "cython" in times else float("nan")
        rows.append((name, times["python"], times.get("cython", float("nan")), speedup))

    print(f"{'kernel':<20} {'python [ms]':>12} {'cython [ms]':>12} {'speedup':>8}")
    for name, tp, tc, sp in rows:
        print(f"{name:<20} {1e3 * tp:12.2f} {1e3 * tc:12.2f} {sp:8.1f}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kernel", "python_s", "cython_s", "speedup"])
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
