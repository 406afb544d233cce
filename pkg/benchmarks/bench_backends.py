"""Time the numba kernels against their pure-numpy twins.

    python3 benchmarks/bench_backends.py [--batch 256] [--repeat 5]

Both backends are imported in-process; the numba functions are warmed up
once so compile time is reported separately from steady-state time.
"""

import argparse
import time
import warnings

import numpy as np

warnings.filterwarnings("ignore", message=".*TBB.*")

from lkp import diversity, kernels, model
from lkp.dpp import enumerate_k_subsets


def psd_batch(rng, b, m):
    B = rng.normal(size=(b, m, m))
    return B @ np.swapaxes(B, 1, 2) + 1e-2 * np.eye(m)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=256, help="ground sets per kdpp batch")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)

    Ls = psd_batch(rng, args.batch, 10)
    subsets = enumerate_k_subsets(10, 5)
    neg = len(subsets) - 1

    V = rng.normal(0, 0.1, (2000, 64))
    plus = np.stack([rng.choice(2000, 5, replace=False) for _ in range(2000)])
    minus = np.stack([rng.choice(2000, 5, replace=False) for _ in range(2000)])
    order = np.arange(2000)

    p = rng.normal(size=(3000, 64))
    g = rng.normal(size=(3000, 64))

    cases = [
        (f"kdpp_batch NPS, {args.batch} x C(10,5)",
         lambda: kernels.kdpp_batch_nb(Ls, subsets, 0, neg, True),
         lambda: kernels.kdpp_batch_np(Ls, subsets, 0, neg, True)),
        (f"subset_logprobs, {args.batch} x C(10,5)",
         lambda: kernels.subset_logprobs_nb(Ls, subsets),
         lambda: kernels.subset_logprobs_np(Ls, subsets)),
        ("kernel SGD epoch, 2000 pairs, rank 64",
         lambda: diversity._sgd_epoch_nb(V.copy(), plus, minus, order, 1e-3, 1e-6, True),
         lambda: diversity._sgd_epoch_np(V.copy(), plus, minus, order, 1e-3, 1e-6, True)),
        ("adam step, 3000 x 64",
         lambda: model._adam_nb(p.copy(), g, np.zeros_like(p), np.zeros_like(p), 1e-3, 0.9, 0.999, 1e-8, 1e-4, 0.1, 0.001),
         lambda: model._adam_np(p.copy(), g, np.zeros_like(p), np.zeros_like(p), 1e-3, 0.9, 0.999, 1e-8, 1e-4, 0.1, 0.001)),
    ]

    print(f"{'case':42s} {'compile s':>10s} {'numba s':>10s} {'numpy s':>10s} {'speedup':>8s}")
    for name, nb, np_ in cases:
        t0 = time.perf_counter()
        nb()
        warm = time.perf_counter() - t0
        t_nb = best_of(nb, args.repeat)
        t_np = best_of(np_, args.repeat)
        print(f"{name:42s} {warm:10.3f} {t_nb:10.4f} {t_np:10.4f} {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
