"""Compare the compiled and pure-numpy slot kernels.

Usage: python benchmarks/bench_slotops.py [--slots 8192] [--repeat 2000]

Times the raw per-op kernels in-process (both modules imported directly),
then a full split-CNN forward pass per backend via subprocess, since the
backend is fixed at import time.
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from bibranch import _slotops_py

try:
    from bibranch import _slotops_cy
except ImportError:
    _slotops_cy = None


def time_op(fn, *args, repeat):
    best = float("inf")
    for _ in range(5):
        t0 = time.perf_counter()
        for _ in range(repeat):
            fn(*args)
        best = min(best, (time.perf_counter() - t0) / repeat)
    return best


def bench_kernels(slots, repeat):
    rng = np.random.default_rng(0)
    a = rng.standard_normal(slots)
    b = rng.standard_normal(slots)
    a.flags.writeable = False
    b.flags.writeable = False
    ops = [
        ("rotate", lambda m: (m.rotate, (a, 37))),
        ("ew_add", lambda m: (m.ew_add, (a, b))),
        ("ew_mul", lambda m: (m.ew_mul, (a, b))),
        ("ew_mul_round", lambda m: (m.ew_mul_round, (a, b, 2.0 ** 30))),
        ("ew_square", lambda m: (m.ew_square, (a,))),
        ("rotate_mul", lambda m: (m.rotate_mul, (a, 37, b))),
        ("rotate_mul_rnd", lambda m: (m.rotate_mul_round, (a, 37, b, 2.0 ** 30))),
    ]
    rows = []
    for name, pick in ops:
        fn, args = pick(_slotops_py)
        t_py = time_op(fn, *args, repeat=repeat)
        if _slotops_cy is not None:
            fn, args = pick(_slotops_cy)
            t_cy = time_op(fn, *args, repeat=repeat)
        else:
            t_cy = float("nan")
        rows.append((name, t_py * 1e6, t_cy * 1e6,
                     t_py / t_cy if t_cy == t_cy else float("nan")))
    print(f"\nper-op kernels ({slots} slots, best of 5 x {repeat}):")
    print(f"{'op':<14}{'python us':>12}{'cython us':>12}{'speedup':>10}")
    for name, us_py, us_cy, ratio in rows:
        print(f"{name:<14}{us_py:>12.2f}{us_cy:>12.2f}{ratio:>10.2f}x")


FORWARD_SNIPPET = """
import time
import bibranch as bb
from bibranch import catalog, fixtures

bundle = catalog.get("cnn3")
weights = fixtures.fixture_weights("cnn3", seed=0)
imgs, _ = fixtures.digit_images(20, seed=1)
dec = bb.decompose_batch(imgs, noise_sigma=0.1, seed=7)
ctx = bb.make_context(**catalog.default_context_params(bundle))
bb.forward_bicrypto(bundle.bi, dec, weights, ctx)  # warm-up
t0 = time.perf_counter()
for _ in range(5):
    bb.forward_bicrypto(bundle.bi, dec, weights, ctx)
print((time.perf_counter() - t0) / 5, bb.active_backend())
"""


def bench_forward():
    print("\nsplit CNN-3 forward, batch 20 (mean of 5):")
    for backend in ("python", "cython"):
        env = dict(os.environ, BIBRANCH_BACKEND=backend)
        proc = subprocess.run([sys.executable, "-c", FORWARD_SNIPPET],
                              capture_output=True, text=True, env=env)
        if proc.returncode != 0:
            print(f"  {backend:<8} unavailable ({proc.stderr.strip().splitlines()[-1]})")
            continue
        seconds, active = proc.stdout.split()
        print(f"  {active:<8} {float(seconds) * 1000:.1f} ms")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--slots", type=int, default=8192)
    ap.add_argument("--repeat", type=int, default=2000)
    args = ap.parse_args()
    if _slotops_cy is None:
        print("note: compiled backend not built; showing numpy fallback only")
    bench_kernels(args.slots, args.repeat)
    bench_forward()


if __name__ == "__main__":
    main()
