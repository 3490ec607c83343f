"""Compiled vs pure-numpy kernels, plus one end-to-end training epoch per backend.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from cian import kernels


def _best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _cases(rng):
    n, dim = 256, 64
    mats = [rng.normal(size=(n, dim)) for _ in range(6)]
    scores = rng.normal(size=(n, n))
    cats = rng.integers(0, 6, size=n)
    thr_scores = rng.normal(size=2000)
    thr_labels = rng.random(2000) < 0.5
    A = rng.normal(size=(64, 32))
    r = rng.normal(size=64)
    M = np.linalg.inv(A.T @ A + 0.5 * np.eye(32))
    x0 = np.ones(32) / np.sqrt(32)
    return {
        "pair_scores 256x256 dim64": lambda impl: kernels.pair_scores(*mats, 0, impl=impl),
        "hardest_negatives 256x256": lambda impl: kernels.hardest_negatives(scores, cats, cats, impl=impl),
        "best_threshold n=2000": lambda impl: kernels.best_threshold(thr_scores, thr_labels, impl=impl),
        "admm_run n=32, 2000 iters": lambda impl: kernels.admm_run(
            M, A.T @ r, A, r, x0, 0.05, 1.0, 1e-300, 2000, impl=impl
        ),
    }


_EPOCH = """
import time
from cian.data import GeneratorConfig, build_pairs, generate_dataset, split_records
from cian.learning import TrainConfig, train
from cian.model import ModelConfig
recs, _ = generate_dataset(GeneratorConfig())
tr, va, _ = split_records(recs)
t0 = time.perf_counter()
train(ModelConfig(), build_pairs(tr, 1, 0), [], TrainConfig(epochs=1))
print(time.perf_counter() - t0)
"""


def _epoch_seconds(backend):
    env = dict(os.environ, CIAN_KERNELS=backend)
    out = subprocess.run([sys.executable, "-c", _EPOCH], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    print(f"active backend: {kernels.BACKEND}; available: {', '.join(backends)}")
    if "cython" not in backends:
        print("compiled extension not built; nothing to compare")
        return 0
    print(f"{'kernel':32s} {'cython ms':>10s} {'python ms':>10s} {'speedup':>8s}")
    for name, fn in _cases(np.random.default_rng(0)).items():
        tc = _best_of(lambda: fn("cython"), args.repeat)
        tp = _best_of(lambda: fn("python"), args.repeat)
        print(f"{name:32s} {tc * 1e3:10.2f} {tp * 1e3:10.2f} {tp / tc:7.1f}x")
    ec, ep = _epoch_seconds("cython"), _epoch_seconds("python")
    print(f"{'train epoch (Both, desk scale)':32s} {ec * 1e3:10.0f} {ep * 1e3:10.0f} {ep / ec:7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
