"""Compiled versus numpy kernels: projections and whole solver runs.

Usage::

    python benchmarks/bench_kernels.py [--quick]
"""
import argparse
import time

import numpy as np

from aggsolve import cournot, kernels
from aggsolve.kernels import available_backends
from aggsolve.hierarchical import run_algorithm2
from aggsolve.schedules import ParamSchedules, hierarchical_exponents
from aggsolve.tikhonov import RunConfig, run_algorithm1


def best_of(fn, repeat=5, number=1):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        for _ in range(number):
            out = fn()
        times.append((time.perf_counter() - t0) / number)
    return min(times), out


def bench_projections(backends, sizes, number):
    rng = np.random.default_rng(0)
    rows = []
    for n in sizes:
        x = rng.normal(size=n) * 3
        lo, hi = -np.ones(n), np.ones(n)
        cap = rng.uniform(2.0, 2.5, n // 2)
        xb = rng.normal(size=2 * (n // 2)) * 3
        center = np.zeros(n)
        cases = {
            "box": lambda m: m.project_box(x, lo, hi),
            "ball": lambda m: m.project_ball(x, center, 1.0),
            "soft_threshold": lambda m: m.soft_threshold(x, 0.5),
            "balanced": lambda m: m.project_balanced(xb, cap),
        }
        for name, call in cases.items():
            res = {}
            for bname, mod in backends.items():
                res[bname] = best_of(lambda: call(mod), number=number)
            ref = np.asarray(res["python"][1])
            for bname, (_, val) in res.items():
                assert np.allclose(np.asarray(val), ref, atol=1e-12), (name, bname)
            rows.append((f"{name} n={n}", {b: t for b, (t, _) in res.items()}))
    return rows


def bench_solver(backends, preset, horizon):
    game, graph, hier, _ = cournot.preset(preset, 0)
    if hier is None:
        params = ParamSchedules.power(game.n_players, 0.8, 0.05, 4.5, 2.5)

        def solve(cfg):
            return run_algorithm1(game, graph, params, cfg)
    else:
        a, b, c, d = hierarchical_exponents(0.1, 0.05)
        params = ParamSchedules.power(game.n_players, a, b, 4.5, 2.5, mu0=1.0, d=d, eps0=1.0, c=c)

        def solve(cfg):
            return run_algorithm2(game, hier, graph, params, cfg)
    rows = []
    results = {}
    original = kernels.run_linear_segment
    try:
        for bname, mod in backends.items():
            kernels.run_linear_segment = mod.run_linear_segment
            cfg = RunConfig(horizon=horizon, record_every=horizon, metrics=("consensus_error",), seed=1)
            t, tr = best_of(lambda: solve(cfg), repeat=3)
            results[bname] = (t, tr)
    finally:
        kernels.run_linear_segment = original
    gh = min(horizon, 2000)
    cfg = RunConfig(horizon=gh, record_every=gh, metrics=("consensus_error",), seed=1, engine="generic")
    t_gen, _ = best_of(lambda: solve(cfg), repeat=1)
    ref = results["python"][1].x_final
    for bname, (_, tr) in results.items():
        assert np.allclose(tr.x_final, ref, atol=1e-9), bname
    times = {b: t for b, (t, _) in results.items()}
    times["generic loop (scaled)"] = t_gen * horizon / gh
    rows.append((f"solver {preset} K={horizon}", times))
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args(argv)
    backends = available_backends()
    if "cython" not in backends:
        print("compiled backend not built; only the numpy kernels are timed")
    sizes = (16, 256) if args.quick else (16, 256, 4096)
    rows = bench_projections(backends, sizes, number=200 if args.quick else 2000)
    horizon = 2000 if args.quick else 20_000
    for preset in ("desk-small", "paper-5.2", "desk-hier"):
        rows += bench_solver(backends, preset, horizon)
    cols = sorted({c for _, t in rows for c in t}, key=lambda c: (c != "python", c != "cython", c))
    print(f"{'case':32s}" + "".join(f"{c:>24s}" for c in cols) + f"{'speedup':>10s}")
    for name, t in rows:
        line = f"{name:32s}" + "".join(f"{t[c] * 1e6:>21.1f} us" if c in t else f"{'':>24s}" for c in cols)
        if "cython" in t:
            line += f"{t['python'] / t['cython']:>9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
