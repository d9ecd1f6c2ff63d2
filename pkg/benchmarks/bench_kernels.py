"""Compare the compiled and numpy clipped-gradient kernels.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import math
import timeit

import numpy as np

from dpstream.learners import LearnerSpec, available_backends, set_backend, train_dp
from dpstream.learners import _reference as ref
from dpstream.learners.backend import clipped_grad_sum

CASES = [
    ("linear, batch 700", (20, 2), 700),
    ("20-10 net, batch 100", (20, 20, 10, 2), 100),
    ("20-10 net, batch 700", (20, 20, 10, 2), 700),
    ("64-32 net, batch 256", (50, 64, 32, 2), 256),
]


def bench_kernel(sizes, batch, repeat):
    rng = np.random.default_rng(0)
    params = rng.normal(scale=0.3, size=ref.n_params(sizes))
    X = rng.normal(size=(batch, sizes[0]))
    y = rng.integers(sizes[-1], size=batch)
    timer = timeit.Timer(lambda: clipped_grad_sum(params, sizes, X, y, ref.CLASSIFIER, 1.0))
    number, _ = timer.autorange()
    return min(timer.repeat(repeat, number)) / number


def bench_training(repeat):
    rng = np.random.default_rng(1)
    X = rng.random((700, 20))
    y = (X.sum(axis=1) > 10).astype(int)
    spec = LearnerSpec()
    timer = timeit.Timer(lambda: train_dp((X, y), spec, 1.0, 1e-4, np.random.default_rng(0)))
    return min(timer.repeat(repeat, 1))


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    backends = available_backends()
    print(f"backends: {', '.join(backends)}")
    print(f"{'case':<24}" + "".join(f"{b:>14}" for b in backends) + ("      speedup" if len(backends) > 1 else ""))
    rows = [(name, lambda s=sizes, b=batch: bench_kernel(s, b, args.repeat)) for name, sizes, batch in CASES]
    rows.append(("train_dp default (700)", lambda: bench_training(args.repeat)))
    for name, fn in rows:
        times = {}
        for backend in backends:
            previous = set_backend(backend)
            try:
                times[backend] = fn()
            finally:
                set_backend(previous)
        line = f"{name:<24}" + "".join(f"{times[b] * 1e3:>11.3f} ms" for b in backends)
        if len(backends) > 1:
            line += f"{times['python'] / times['native']:>12.2f}x" if math.isfinite(times["native"]) else ""
        print(line)


if __name__ == "__main__":
    main()
