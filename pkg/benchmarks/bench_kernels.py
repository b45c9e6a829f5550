"""Compiled vs numpy stepping kernel.

    python benchmarks/bench_kernels.py [--repeat 5] [--steps 2000]

Times ``backend.advance`` on a fixed block of steps and a full
``GalerkinSolver.simulate`` with jumps and diffusion, for each available
backend, and checks the two backends agree.
"""
from __future__ import annotations

import argparse
import math
import time

import numpy as np

from skdv import backend
from skdv.coefficients import BoundedMultiplicativeJumps, DiagonalDampedDiffusion
from skdv.noise import IntensityMeasure
from skdv.solver import GalerkinSolver, SolverConfig
from skdv.spectral import SpectralGrid


def build(m, dt, T, scheme):
    grid = SpectralGrid(0.0, 2 * math.pi, m)
    nu = IntensityMeasure([1.0, -1.0], [1.0, 1.0])
    F = BoundedMultiplicativeJumps(nu, 0.3, 10.0)
    Phi = DiagonalDampedDiffusion(grid, amplitude=0.3)
    cfg = SolverConfig(dt=dt, T=T, m=m, scheme=scheme, seed=1)
    u0 = grid.interpolate(lambda x: np.sin(x) + 0.5 * np.cos(2 * x))
    return grid, GalerkinSolver(grid, cfg, F, Phi, nu), u0


def best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--ms", type=int, nargs="+", default=[16, 32, 64])
    ap.add_argument("--scheme", default="exponential_rk4")
    args = ap.parse_args(argv)

    names = backend.available()
    print(f"backends: {', '.join(names)} (default {backend.NAME})")
    print(f"{'m':>4} {'kernel':<9} {'advance ms':>11} {'simulate ms':>12} {'speedup':>8}")
    for m in args.ms:
        dt = 1e-3
        grid, solver, u0 = build(m, dt, args.steps * dt, args.scheme)
        rng = np.random.default_rng(0)
        dW = rng.standard_normal((args.steps, solver.ops.S.shape[1])) * math.sqrt(dt)
        dts = np.full(args.steps, dt)
        res, ref = {}, {}
        for name in names:
            out = np.empty((args.steps, grid.dim))
            adv = best(lambda: backend.advance(u0.coeffs, dts, dW, out, solver.ops, math.inf, 0.0, name), args.repeat)
            solver.backend = name
            sim = best(lambda: solver.simulate(u0, 0), args.repeat)
            res[name] = (adv, sim)
            ref[name] = out.copy()
        base = res["python"]
        for name in names:
            adv, sim = res[name]
            print(f"{m:>4} {name:<9} {adv * 1e3:>11.2f} {sim * 1e3:>12.2f} {base[0] / adv:>7.1f}x")
        if len(names) > 1:
            diff = float(np.max(np.abs(ref["compiled"] - ref["python"])))
            scale = float(np.max(np.abs(ref["python"])))
            print(f"     max |compiled - python| / max|u| = {diff / scale:.2e}")


if __name__ == "__main__":
    main()
