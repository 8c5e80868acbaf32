"""Compare the compiled kernels against the numpy fallback.

Micro-benchmarks call both kernel modules directly; the end-to-end row
re-runs a short training loop in a subprocess per backend (selection
happens at import via LDAG_BACKEND).

Usage: python benchmarks/bench_backends.py [--repeats 200]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from ldag.backend import py_kernels

try:
    from ldag.backend import _ckernels
except ImportError:
    _ckernels = None


def timeit(fn, repeats):
    fn()  # warmup
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def micro(repeats):
    rng = np.random.default_rng(1)
    cases = {
        "matmul 64x192 @ 192x64": (
            lambda k: k.matmul(a192, b192),),
        "matmul 64x134 @ 134x64": (
            lambda k: k.matmul(a134, b134),),
        "bilinear up 8x8 -> 64x64": (
            lambda k: k.bilinear_fwd(grid, 64, 64),),
        "bilinear bwd 64x64 -> 8x8": (
            lambda k: k.bilinear_bwd(big, 8, 8),),
        "adam step 70k params": (
            lambda k: k.adam_step(p, g, m, v, 3, 1e-4, 0.9, 0.999, 1e-8),),
    }
    a192 = rng.standard_normal((64, 192)).astype(np.float32)
    b192 = rng.standard_normal((192, 64)).astype(np.float32)
    a134 = rng.standard_normal((64, 134)).astype(np.float32)
    b134 = rng.standard_normal((134, 64)).astype(np.float32)
    grid = rng.standard_normal((1, 8, 8)).astype(np.float32)
    big = rng.standard_normal((1, 64, 64)).astype(np.float32)
    p = rng.standard_normal(70000).astype(np.float32)
    g = rng.standard_normal(70000).astype(np.float32)
    m = np.zeros_like(p)
    v = np.zeros_like(p)

    print(f"{'kernel':34s} {'python':>12s} {'compiled':>12s} {'speedup':>9s}")
    for name, (fn,) in cases.items():
        t_py = timeit(lambda: fn(py_kernels), repeats)
        if _ckernels is None:
            print(f"{name:34s} {t_py * 1e6:10.1f}us {'n/a':>12s}")
            continue
        t_c = timeit(lambda: fn(_ckernels), repeats)
        print(f"{name:34s} {t_py * 1e6:10.1f}us {t_c * 1e6:10.1f}us {t_py / t_c:8.2f}x")


_E2E_SNIPPET = """
import time
from ldag import backend
from ldag.training import TrainConfig, Pipeline, train
cfg = TrainConfig(seed=7, epochs=2, episodes_per_epoch=10, batch_size=1)
pipe = Pipeline(cfg)
train(cfg, pipe)  # warm caches
t0 = time.perf_counter()
train(cfg, pipe)
print(f"{backend.NAME} {time.perf_counter() - t0:.3f}")
"""


def end_to_end(runs=3):
    print(f"\n{'end-to-end (20 train episodes)':34s}", end=" ", flush=True)
    results = {}
    for name in ("python", "compiled"):
        env = dict(os.environ, LDAG_BACKEND=name)
        samples = []
        for _ in range(runs):
            try:
                out = subprocess.run([sys.executable, "-c", _E2E_SNIPPET], env=env,
                                     capture_output=True, text=True, check=True)
                samples.append(float(out.stdout.split()[-1]))
            except subprocess.CalledProcessError as e:
                print(f"\n  {name}: failed: {e.stderr.strip().splitlines()[-1]}")
                break
        if samples:
            results[name] = min(samples)
    if len(results) == 2:
        print(f"{results['python'] * 1e3:10.1f}ms {results['compiled'] * 1e3:10.1f}ms "
              f"{results['python'] / results['compiled']:8.2f}x")


if __name__ == "__main__":
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()
    micro(args.repeats)
    end_to_end()
