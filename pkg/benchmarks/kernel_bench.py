"""Benchmark the numba kernels against the pure-NumPy fallback.

Times each hot kernel at several shapes, then an end-to-end training-step
comparison run in subprocesses with TWINFLOW_BACKEND set, since the backend
is chosen at import time.

Usage: python benchmarks/kernel_bench.py [--train-steps N]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from twinflow.kernels import numpy_impl

try:
    from twinflow.kernels import numba_impl
except ImportError:
    numba_impl = None

SHAPES = {
    "small (seq 16, d 64)": (16, 64),
    "medium (seq 64, d 256)": (64, 256),
    "large (seq 256, d 1024)": (256, 1024),
}


def timeit(fn, *args, repeat=2000):
    fn(*args)  # warm up (and JIT-compile)
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat


def bench_kernels():
    rng = np.random.default_rng(0)
    rows = []
    for label, (seq, d) in SHAPES.items():
        x = np.ascontiguousarray(rng.normal(size=(seq, d)))
        g = np.ascontiguousarray(rng.normal(size=(seq, d)))
        flat = np.ascontiguousarray(rng.normal(size=seq * d))
        gflat = np.ascontiguousarray(rng.normal(size=seq * d))
        pos = np.arange(seq, dtype=np.int64)
        ang = np.outer(np.arange(seq, dtype=float), np.arange(d // 2) * 0.1)
        cos, sin = np.ascontiguousarray(np.cos(ang)), np.ascontiguousarray(np.sin(ang))
        y = numpy_impl.softmax_rows(x)
        yl, rstd = numpy_impl.layernorm_rows(x, 1e-5)

        cases = [
            ("softmax_rows", (x,)),
            ("softmax_rows_grad", (y, g)),
            ("layernorm_rows", (x, 1e-5)),
            ("layernorm_rows_grad", (yl, rstd, g)),
            ("gelu", (flat,)),
            ("gelu_grad", (flat, gflat)),
            ("rope_rotate", (x, pos, cos, sin, 1.0)),
        ]
        for name, args in cases:
            t_np = timeit(getattr(numpy_impl, name), *args)
            if numba_impl is not None:
                t_nb = timeit(getattr(numba_impl, name), *args)
                rows.append((label, name, t_np * 1e6, t_nb * 1e6, t_np / t_nb))
            else:
                rows.append((label, name, t_np * 1e6, float("nan"), float("nan")))
    return rows


def print_table(rows):
    header = f"{'shape':<24} {'kernel':<20} {'numpy us':>10} {'numba us':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for label, name, t_np, t_nb, speedup in rows:
        print(f"{label:<24} {name:<20} {t_np:>10.2f} {t_nb:>10.2f} {speedup:>7.2f}x")


TRAIN_SNIPPET = """
import time
import twinflow as tf
from twinflow.trainer import build_model, train_loop

config = tf.RunConfig(depth=2, width=64, d_in=16, train_steps={steps}, lr=2e-3, seed=0)
model = build_model(config)
train_loop(model, config, steps=5)  # warm up / JIT
t0 = time.perf_counter()
train_loop(model, config, steps={steps})
dt = time.perf_counter() - t0
print(f"{{tf.BACKEND}}: {{dt:.2f}}s for {steps} steps ({{1000 * dt / {steps}:.2f}} ms/step)")
"""


def bench_train(steps):
    print(f"\nEnd-to-end training step, {steps} steps per backend:")
    for backend in ("numba", "numpy"):
        env = dict(os.environ, TWINFLOW_BACKEND=backend)
        subprocess.run([sys.executable, "-c", TRAIN_SNIPPET.format(steps=steps)],
                       env=env, check=True)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--train-steps", type=int, default=200,
                        help="steps for the end-to-end comparison (0 skips it)")
    args = parser.parse_args()
    if numba_impl is None:
        print("numba not importable; showing the numpy path only\n")
    print_table(bench_kernels())
    if args.train_steps > 0:
        bench_train(args.train_steps)


if __name__ == "__main__":
    main()
