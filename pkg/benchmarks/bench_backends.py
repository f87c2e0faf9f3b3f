#!/usr/bin/env python3
"""Timing comparison of the compiled and numpy kernel backends.

Measures the three hot paths (forward pass, input gradient, double-backprop
directional pass) on a training-shaped workload and prints per-call medians
plus the speedup. Run after building the extension:

    python3 benchmarks/bench_backends.py --batch 256 --hidden 64,64 --repeat 200
"""
from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from cfdistill.kernels import get_backend
from cfdistill.net import MlpModel, MlpSpec


def time_call(fn, repeat: int) -> float:
    """Median seconds per call over `repeat` timed runs (after one warmup)."""
    fn()
    samples = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def build_workload(batch: int, hidden: tuple[int, ...], seed: int):
    spec = MlpSpec(hidden=hidden)
    model = MlpModel.init_random(spec, seed=seed)
    rng = np.random.default_rng(seed + 1)
    states = np.column_stack(
        [
            rng.uniform(0.0, 40.0, batch),
            rng.uniform(0.1, 100.0, batch),
            rng.uniform(-5.0, 5.0, batch),
        ]
    )
    x = (states - np.asarray(spec.input_shift)) / np.asarray(spec.input_scale)
    u = rng.standard_normal((batch, 3))
    seed_vec = rng.standard_normal(batch)
    return model, x, u, seed_vec


def bench_backend(name: str, model, x, u, seed_vec, repeat: int) -> dict:
    be = get_backend(name)
    act = model.spec.act_code
    _, hs = be.forward(model.Ws, model.bs, x, act)
    return {
        "forward": time_call(lambda: be.forward(model.Ws, model.bs, x, act), repeat),
        "input_grad": time_call(lambda: be.input_grad(model.Ws, hs, act), repeat),
        "seed_grads": time_call(
            lambda: be.param_grads_output_seed(model.Ws, model.bs, hs, seed_vec, act),
            repeat,
        ),
        "directional_grads": time_call(
            lambda: be.param_grads_directional(model.Ws, model.bs, hs, u, act),
            repeat,
        ),
    }


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=256)
    ap.add_argument("--hidden", type=str, default="64,64")
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    hidden = tuple(int(w) for w in args.hidden.split(","))
    model, x, u, seed_vec = build_workload(args.batch, hidden, args.seed)

    results = {}
    for name in ("python", "compiled"):
        try:
            results[name] = bench_backend(name, model, x, u, seed_vec, args.repeat)
        except ImportError:
            print(f"{name}: not available (extension not built)")
    if not results:
        return 1

    arch = "x".join(str(w) for w in (3, *hidden, 1))
    print(f"batch={args.batch} net={arch} repeat={args.repeat} (median us/call)")
    header = f"{'kernel':<20}" + "".join(f"{n:>12}" for n in results)
    if len(results) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for kernel in ("forward", "input_grad", "seed_grads", "directional_grads"):
        row = f"{kernel:<20}"
        for name in results:
            row += f"{results[name][kernel] * 1e6:>12.1f}"
        if len(results) == 2:
            row += f"{results['python'][kernel] / results['compiled'][kernel]:>9.1f}x"
        print(row)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
