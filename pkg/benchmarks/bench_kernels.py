"""Compare the compiled and numpy kernel backends.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--no-train]
"""

import argparse
import time
import timeit
from dataclasses import replace

import numpy as np

from precise import kernels
from precise.data import gen_synthetic
from precise.experiment import TrainConfig, train

SHAPES = [(16, 4, 32), (256, 10, 32), (1024, 50, 256)]


def bench(fn, repeat):
    number = max(1, int(0.05 / max(timeit.timeit(fn, number=1), 1e-7)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def kernel_rows(repeat):
    rng = np.random.default_rng(0)
    impls = kernels.implementations()
    for n, m, k in SHAPES:
        a, b = rng.normal(size=(n, k)), rng.normal(size=(m, k))
        dist = kernels.pairwise_distances(a, b)
        g = rng.normal(size=dist.shape)
        mask = rng.random(dist.shape) < 0.5
        mask[:, 0] = True
        cases = {
            "distances": lambda impl: kernels.pairwise_distances(a, b, impl=impl),
            "distances_backward": lambda impl: kernels.pairwise_distances_backward(a, b, dist, g, impl=impl),
            "masked_min": lambda impl: kernels.masked_min(dist, mask, 1, impl=impl),
        }
        for name, case in cases.items():
            times = {label: bench(lambda: case(impl), repeat) for label, impl in impls.items()}
            yield f"{n}x{m}x{k}", name, times


def train_rows():
    ds = gen_synthetic([190, 10], seed=0)
    cfg = replace(TrainConfig(), epochs=5)
    saved = kernels._impl
    try:
        for label, impl in kernels.implementations().items():
            kernels._impl = impl
            t0 = time.perf_counter()
            train(ds, cfg, seed=0)
            yield label, time.perf_counter() - t0
    finally:
        kernels._impl = saved


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--no-train", action="store_true")
    args = parser.parse_args()
    labels = list(kernels.implementations())
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'shape':>14} {'kernel':>20} " + " ".join(f"{l + ' (us)':>14}" for l in labels) + "  speedup")
    for shape, name, times in kernel_rows(args.repeat):
        cols = " ".join(f"{times[l] * 1e6:14.1f}" for l in labels)
        speed = times["python"] / times["compiled"] if "compiled" in times else float("nan")
        print(f"{shape:>14} {name:>20} {cols}  {speed:6.2f}x")
    if not args.no_train:
        print("\n5-epoch training run, 200 samples at 16x16:")
        for label, seconds in train_rows():
            print(f"  {label:>9}: {seconds:.2f}s")


if __name__ == "__main__":
    main()
