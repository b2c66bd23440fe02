#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-numpy fallback.

Covers the isolated hot kernels (full/batch gradients of both logistic
families) and two composite workloads (a local AL solve and a short
primal-dual run) where the inner loop dominates.  Kernels are swapped at
the dispatch module, which looks them up per call.

    python3 benchmarks/bench_backends.py [--reps 2000]
"""

import argparse
import time
from contextlib import contextmanager

import numpy as np

import fedpd_lab as fl
from fedpd_lab import _kernels
from fedpd_lab._kernels import get_backend
from fedpd_lab.local_solvers import OracleIConfig, oracle1_solve

KERNEL_NAMES = (
    "penlog_value", "penlog_grad", "penlog_batch_grad",
    "siglog_value", "siglog_grad", "siglog_batch_grad",
)


@contextmanager
def backend(name):
    impl = get_backend(name)
    saved = {k: getattr(_kernels, k) for k in KERNEL_NAMES}
    try:
        for k in KERNEL_NAMES:
            setattr(_kernels, k, getattr(impl, k))
        yield
    finally:
        for k, v in saved.items():
            setattr(_kernels, k, v)


def timeit(fn, reps):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(reps):
        fn()
    return (time.perf_counter() - t0) / reps


def build_workloads(reps):
    rng = np.random.default_rng(0)
    A = np.ascontiguousarray(rng.standard_normal((400, 50)))
    b = np.ascontiguousarray(rng.choice((-1.0, 1.0), size=400))
    Z = np.ascontiguousarray(b[:, None] * A)
    x = rng.standard_normal(50)
    idx = rng.integers(0, 400, size=32).astype(np.int64)

    prob = fl.gen_weak_noniid(10, 100, 20, seed=7)
    eta = 0.15 / prob.lipschitz
    x0 = rng.standard_normal(20) * 0.1
    lam = rng.standard_normal(20) * 0.01
    cfg = OracleIConfig(variant="gd", tol=1e-10)

    run_cfg = fl.RunConfig(algorithm="fedpd-gd", rounds=100, eta=eta,
                           oracle1=OracleIConfig(variant="gd", tol=1e-8))

    return [
        ("penlog grad (m=400,d=50)", reps,
         lambda: _kernels.penlog_grad(Z, x, 1.0, 0.1)),
        ("penlog batch grad (B=32)", reps,
         lambda: _kernels.penlog_batch_grad(Z, idx, x, 1.0, 0.1)),
        ("siglog grad (m=400,d=50)", reps,
         lambda: _kernels.siglog_grad(A, b, x)),
        ("siglog batch grad (B=32)", reps,
         lambda: _kernels.siglog_batch_grad(A, b, idx, x)),
        ("oracle1 solve (tol=1e-10)", max(reps // 40, 1),
         lambda: oracle1_solve(prob, 0, x0, x0, lam, eta, cfg)),
        ("fedpd-gd run (N=10,T=100)", 3,
         lambda: fl.run(prob, run_cfg)),
    ]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--reps", type=int, default=2000)
    args = ap.parse_args()

    try:
        get_backend("compiled")
    except ImportError:
        raise SystemExit("compiled backend not built; run pip install -e . first")

    workloads = build_workloads(args.reps)
    print(f"{'workload':<30} {'python':>12} {'compiled':>12} {'speedup':>9}")
    for name, reps, fn in workloads:
        times = {}
        for which in ("python", "compiled"):
            with backend(which):
                times[which] = timeit(fn, reps)
        ratio = times["python"] / times["compiled"]
        print(f"{name:<30} {times['python'] * 1e6:>10.1f}us "
              f"{times['compiled'] * 1e6:>10.1f}us {ratio:>8.1f}x")


if __name__ == "__main__":
    main()
