"""Compiled vs pure-Python kernel timings, plus a short training run per backend.

    python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from gndv import kernels

TRAIN_SNIPPET = """
import time
from gndv.data import make_blobs, minmax_scale
from gndv.model import ModelConfig
from gndv.numeric import RandomSource
from gndv.training import train
ds = minmax_scale(make_blobs(300, 50, 3, 20.0, RandomSource(1)))
t = time.perf_counter()
train(ds, ModelConfig(epochs=50, patience=0))
print(time.perf_counter() - t)
"""


def cases():
    rng = np.random.default_rng(0)
    bits = kernels.python_backend.splitmix64_fill(1, 0, 200_000)
    dst = np.zeros((2, 5000))
    cols = rng.integers(0, 5000, 4096)
    src = rng.normal(size=(2, 4096))
    labels = rng.integers(0, 10, size=(20_000, 5))
    ranks = rng.integers(1, 2000, size=(2000, 5))
    return {
        "splitmix64_fill 2e5": lambda b: b.splitmix64_fill(1, 0, 200_000),
        "box_muller 2e5": lambda b: b.box_muller(bits),
        "permutation 6e4": lambda b: b.permutation(1, 0, 60_000),
        "scatter_add 4096 cols": lambda b: b.scatter_add_columns(dst, cols, src),
        "knn_vote 2e4x5": lambda b: b.knn_vote(labels, 10),
        "trust_penalty 2000x5": lambda b: b.trust_penalty(ranks, 5),
    }


def train_seconds(backend):
    env = dict(os.environ, GNDV_BACKEND=backend)
    out = subprocess.run([sys.executable, "-c", TRAIN_SNIPPET], env=env, check=True,
                         capture_output=True, text=True)
    return float(out.stdout)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if kernels.compiled_backend is None:
        sys.exit("compiled extension not built; run pip install -e . --no-build-isolation")
    print(f"{'kernel':<24}{'compiled ms':>12}{'python ms':>12}{'speedup':>9}")
    for name, fn in cases().items():
        fast = min(timeit.repeat(lambda: fn(kernels.compiled_backend), number=1, repeat=args.repeat))
        slow = min(timeit.repeat(lambda: fn(kernels.python_backend), number=1, repeat=args.repeat))
        print(f"{name:<24}{fast * 1e3:>12.3f}{slow * 1e3:>12.3f}{slow / fast:>8.1f}x")
    fast, slow = train_seconds("compiled"), train_seconds("python")
    print(f"{'train 50 epochs (blobs)':<24}{fast * 1e3:>12.1f}{slow * 1e3:>12.1f}{slow / fast:>8.1f}x")


if __name__ == "__main__":
    main()
