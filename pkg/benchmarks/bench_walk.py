"""Benchmark the compiled stepping kernel against the pure-Python fallback.

Runs identical workloads through both backends, checks that the outputs
are bit-identical, and prints a throughput table.

Usage: python benchmarks/bench_walk.py [--quick]
"""

import argparse
import sys
import time

import numpy as np

import rwre.kernels as K
from rwre.environment import Region, constant_env, generate_iid
from rwre.walk import LevelDown, LevelUp, StopSpec, simulate_batch


def run_case(name, env, stop, n, mode, impls):
    rows = []
    outputs = {}
    for bname, impl in impls.items():
        old = K.run_batch, K.resume_one
        K.run_batch, K.resume_one = impl.run_batch, impl.resume_one
        try:
            t0 = time.perf_counter()
            res = simulate_batch(env, (0,) * env.d, stop, seed=1234, n=n, mode=mode)
            dt = time.perf_counter() - t0
        finally:
            K.run_batch, K.resume_one = old
        steps = int(res.n_steps.sum())
        outputs[bname] = (res.final, res.n_steps, res.status)
        rows.append((name, bname, n, steps, dt, steps / dt / 1e6))
    names = list(outputs)
    if len(names) == 2:
        a, b = outputs[names[0]], outputs[names[1]]
        assert all(np.array_equal(x, y) for x, y in zip(a, b)), f"{name}: backends disagree"
    return rows


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args()

    impls = K.backends()
    print(f"backends available: {', '.join(impls)} (selected: {K.BACKEND})")
    scale = 10 if args.quick else 1

    cases = []
    drift = constant_env([0.4, 0.1, 0.25, 0.25], kappa=0.05)
    cases.append(("constant/horizon-2000/quenched", drift,
                  StopSpec.first_of(horizon=2000), 2000 // scale, 0))
    cases.append(("constant/horizon-2000/coupled", drift,
                  StopSpec.first_of(horizon=2000), 2000 // scale, 1))
    iid = generate_iid(0.05, 2, Region.cube(2, 4000), seed=3)
    slab = StopSpec.first_of(LevelUp((1, 0), 30), LevelDown((1, 0), -30),
                             horizon=100_000)
    cases.append(("iid/slab-30/quenched", iid, slab, 400 // scale, 0))

    rows = []
    for case in cases:
        rows.extend(run_case(*case, impls))

    print(f"\n{'case':<34}{'backend':<9}{'walks':>7}{'steps':>12}"
          f"{'time (s)':>10}{'Msteps/s':>10}")
    for name, bname, n, steps, dt, rate in rows:
        print(f"{name:<34}{bname:<9}{n:>7}{steps:>12}{dt:>10.3f}{rate:>10.2f}")
    by_case = {}
    for name, bname, _, _, dt, _ in rows:
        by_case.setdefault(name, {})[bname] = dt
    if all(len(v) == 2 for v in by_case.values()):
        print("\nspeedups (python / cython):")
        for name, v in by_case.items():
            print(f"  {name:<34}{v['python'] / v['cython']:>8.1f}x")
    print("\noutputs bit-identical across backends: yes")
    return 0


if __name__ == "__main__":
    sys.exit(main())
