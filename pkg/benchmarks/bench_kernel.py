"""Compiled vs numpy physics kernel: equality check and throughput.

    python benchmarks/bench_kernel.py --envs 1000 --steps 60 --variants wall ditch flat
"""
from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from tabletop_her.simenv import initial_states, make_config, physics_params, static_boxes
from tabletop_her.simenv import layout as L
from tabletop_her.simenv import physics


def run(backend, states, actions, params, statics) -> tuple[np.ndarray, np.ndarray, float]:
    s = states.copy()
    diag = np.zeros((s.shape[0], L.N_DIAG))
    t0 = time.perf_counter()
    for a in actions:
        backend.step_batch(s, a, params, statics, diag)
    return s, diag, time.perf_counter() - t0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--envs", type=int, default=1000)
    ap.add_argument("--steps", type=int, default=60)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--variants", nargs="+", default=["wall", "ditch", "flat"])
    args = ap.parse_args(argv)

    if physics.compiled_backend is None:
        print("compiled kernel not built; only the numpy backend is available", file=sys.stderr)
        return 1
    print(f"{'variant':<10}{'compiled s':>12}{'numpy s':>10}{'speedup':>9}{'steps/s':>12}  identical")
    ok = True
    for name in args.variants:
        cfg = make_config(name)
        rng = np.random.default_rng(args.seed)
        params, statics = physics_params(cfg), static_boxes(cfg)
        states = initial_states(cfg, args.envs, rng)
        actions = rng.uniform(-1.0, 1.0, (args.steps, args.envs, 4))
        sc, dc, tc = run(physics.compiled_backend, states, actions, params, statics)
        sp, dp, tp = run(physics.python_backend, states, actions, params, statics)
        same = np.array_equal(sc, sp) and np.array_equal(dc, dp)
        ok &= same
        rate = args.envs * args.steps / tc
        print(f"{name:<10}{tc:>12.3f}{tp:>10.3f}{tp / tc:>8.1f}x{rate:>12.0f}  {same}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
