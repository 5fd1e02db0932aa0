#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Times the three crossing kernels on synthetic workloads and a full
line-partition query on dense and convolutional networks, once per
backend, and prints the speedups.  Run from the repository root:

    python benchmarks/bench_backends.py [--repeats N]

Setting LINRESTRICT_NUMBA=0 would hide the numba backend entirely, so
run this without it.
"""

import argparse
import time

import numpy as np

from linrestrict import (
    Conv2D,
    Dense,
    Flatten,
    LineQuery,
    MaxPool,
    Network,
    ReLU,
    available_backends,
    exactline_network,
    use_backend,
)
from linrestrict import _kernels


def _time(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _kernel_workloads(rng):
    post = rng.normal(0.0, 1.0, (4000, 4096))
    alphas = np.sort(rng.uniform(0.0, 1.0, 4000))
    alphas[0], alphas[-1] = 0.0, 1.0

    qwin = rng.normal(0.0, 1.0, (2000, 256, 9))
    rwin = rng.normal(0.0, 1.0, (2000, 256, 9))
    walphas = np.sort(rng.uniform(0.0, 1.0, 2001))
    walphas[0], walphas[-1] = 0.0, 1.0

    return {
        "relu_crossings (4000x4096)": lambda: _kernels.relu_crossings(post, alphas),
        "maxpool_crossings (2000x256x9)": lambda: _kernels.maxpool_crossings(
            qwin, rwin, walphas
        ),
        "relu_maxpool_crossings (2000x256x9)": lambda: _kernels.relu_maxpool_crossings(
            qwin, rwin, walphas
        ),
    }


def _network_workloads(rng):
    dense = Network(
        (64,),
        tuple(
            layer
            for i in range(4)
            for layer in (
                Dense(rng.normal(0, 1, (256, 64 if i == 0 else 256)) / 16.0,
                      rng.normal(0, 0.3, 256)),
                ReLU(),
            )
        )
        + (Dense(rng.normal(0, 1, (10, 256)) / 16.0, rng.normal(0, 0.3, 10)),),
    )
    dq = LineQuery(rng.normal(0, 2, 64), rng.normal(0, 2, 64))

    conv = Network(
        (2, 20, 20),
        (
            Conv2D(rng.normal(0, 0.35, (16, 2, 3, 3)), rng.normal(0, 0.2, 16), (1, 1), (1, 1)),
            ReLU(),
            Conv2D(rng.normal(0, 0.25, (12, 16, 3, 3)), rng.normal(0, 0.2, 12), (1, 1), (1, 1)),
            ReLU(),
            MaxPool((2, 2), (2, 2)),
            Flatten(),
            Dense(rng.normal(0, 0.1, (5, 1200)), rng.normal(0, 0.1, 5)),
        ),
    )
    cq = LineQuery(rng.normal(0, 1, (2, 20, 20)), rng.normal(0, 1, (2, 20, 20)))

    return {
        "exactline dense 4x256": lambda: exactline_network(dense, dq),
        "exactline conv 16/12ch 20x20 + pool": lambda: exactline_network(conv, cq),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    backends = available_backends()
    if "numba" not in backends:
        print("numba backend unavailable; nothing to compare")
        return

    rng = np.random.default_rng(2024)
    cases = {**_kernel_workloads(rng), **_network_workloads(rng)}

    with use_backend("numba"):
        _kernels.warmup()
        for fn in cases.values():
            fn()  # compile + fault in memory before timing

    width = max(len(k) for k in cases)
    print(f"{'workload':<{width}}  {'numpy':>9}  {'numba':>9}  {'speedup':>8}")
    for name, fn in cases.items():
        times = {}
        for backend in ("numpy", "numba"):
            with use_backend(backend):
                times[backend] = _time(fn, args.repeats)
        ratio = times["numpy"] / times["numba"]
        print(
            f"{name:<{width}}  {times['numpy'] * 1e3:8.1f}ms  "
            f"{times['numba'] * 1e3:8.1f}ms  {ratio:7.1f}x"
        )


if __name__ == "__main__":
    main()
