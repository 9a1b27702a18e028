"""Compare the numba and numpy kernel backends.

Times each kernel on shapes taken from the default network, plus one full
training step with each backend. Run with ``python3 benchmarks/bench_kernels.py``.
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from fednilm import kernels


def best_of(fn, repeat):
    fn()  # warm-up, also triggers JIT compilation
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def conv_cases(rng):
    # (batch, c_in, c_out, length) for the default encoder and decoder layers
    for B, cin, cout, T in [(32, 1, 8, 120), (32, 8, 16, 60), (32, 16, 32, 30),
                            (32, 32, 32, 30), (32, 64, 16, 30)]:
        x = rng.standard_normal((B, cin, T))
        w = rng.standard_normal((cout, cin, 3))
        b = rng.standard_normal(cout)
        dy = rng.standard_normal((B, cout, T))
        yield f"conv {cin:>2d}->{cout:<2d} L={T:<3d}", x, w, b, dy


def kernel_table(repeat):
    rng = np.random.default_rng(0)
    rows = []
    for name, x, w, b, dy in conv_cases(rng):
        for kind in ("forward", "backward"):
            if kind == "forward":
                fa = lambda: kernels.conv1d_forward_numba(x, w, b, 1)
                fb = lambda: kernels.conv1d_forward_numpy(x, w, b, 1)
            else:
                fa = lambda: kernels.conv1d_backward_numba(x, w, dy, 1)
                fb = lambda: kernels.conv1d_backward_numpy(x, w, dy, 1)
            rows.append((f"{name} {kind}", best_of(fa, repeat), best_of(fb, repeat)))
    states = (rng.random(2880 * 60) < 0.3).astype(np.int8)
    for label, fn_a, fn_b, arg in [
        ("merge_short_gaps n=172800", kernels.merge_short_gaps_numba, kernels.merge_short_gaps_numpy, 3),
        ("remove_short_on  n=172800", kernels.remove_short_on_numba, kernels.remove_short_on_numpy, 3),
    ]:
        rows.append((label, best_of(lambda: fn_a(states, arg), repeat),
                     best_of(lambda: fn_b(states, arg), repeat)))
    return rows


STEP_SNIPPET = """
import time, numpy as np
from fednilm import NetworkSpec, build_network, loss_and_grad
spec = NetworkSpec()
p = build_network(spec, 0)
rng = np.random.default_rng(0)
x = rng.random((32, spec.window_len))
y = (rng.random((32, spec.appliance_count, spec.window_len)) < 0.3).astype(float)
loss_and_grad(p, spec, x, y, train_mode=True, seed=0)
best = 1e9
for _ in range({repeat}):
    t0 = time.perf_counter()
    loss_and_grad(p, spec, x, y, train_mode=True, seed=0)
    best = min(best, time.perf_counter() - t0)
print(best)
"""


def train_step(backend, repeat):
    # the backend is fixed at import time, so each one runs in a fresh interpreter
    env = dict(os.environ, FEDNILM_BACKEND=backend)
    out = subprocess.run([sys.executable, "-c", STEP_SNIPPET.format(repeat=repeat)],
                         env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    print(f"{'kernel':40s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for label, ta, tb in kernel_table(args.repeat):
        print(f"{label:40s} {ta * 1e3:10.3f} {tb * 1e3:10.3f} {tb / ta:8.2f}")
    ta, tb = train_step("numba", args.repeat), train_step("numpy", args.repeat)
    print(f"{'train step (B=32, default net)':40s} {ta * 1e3:10.3f} {tb * 1e3:10.3f} {tb / ta:8.2f}")


if __name__ == "__main__":
    main()
