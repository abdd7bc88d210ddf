"""Compare the compiled and numpy kernel backends.

Run ``python3 benchmarks/bench_kernels.py``; prints best-of-N wall times
and the max difference (relative to the largest output) between the two backends for each kernel.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from fcdn.kernels import compiled_backend, python_backend


def _cases(rng, scale):
    big = scale == "paper"
    k, t = (64, 1000) if big else (16, 250)
    x = rng.standard_normal(((8 if big else 16) * k, t))
    taps = rng.standard_normal(31)
    phases = rng.uniform(-np.pi, np.pi, (k, (40 if big else 20) * t))
    cin, cout, kw = (80, 160, 20) if big else (8, 12, 8)
    cx = rng.standard_normal((2 if big else 16, cin, k, t - kw)).astype(np.float32)
    cw = (rng.standard_normal((cout, cin, kw)) * 0.1).astype(np.float32)
    return {
        "fir_filter": (lambda m: m.fir_filter(x, taps),),
        "plv_pairs": (lambda m: m.plv_pairs(phases),),
        "conv_forward": (lambda m: m.conv_time_forward(cx, cw),),
        "conv_backward": (lambda m: m.conv_time_backward(cx, cw, m.conv_time_forward(cx, cw)),),
    }


def _diff(a, b):
    if isinstance(a, tuple):
        return max(_diff(x, y) for x, y in zip(a, b))
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), 1e-300))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scale", choices=("desk", "paper"), default="desk")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if compiled_backend is None:
        print("compiled extension not built; only the numpy backend is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':15s} {'numpy s':>10s} {'compiled s':>11s} {'speedup':>8s} {'rel diff':>10s}")
    for name, (fn,) in _cases(rng, args.scale).items():
        tp = min(timeit.repeat(lambda: fn(python_backend), number=1, repeat=args.repeat))
        if compiled_backend is None:
            print(f"{name:15s} {tp:10.4f} {'-':>11s}")
            continue
        tc = min(timeit.repeat(lambda: fn(compiled_backend), number=1, repeat=args.repeat))
        d = _diff(fn(python_backend), fn(compiled_backend))
        print(f"{name:15s} {tp:10.4f} {tc:11.4f} {tp / tc:7.1f}x {d:10.2e}")


if __name__ == "__main__":
    main()
