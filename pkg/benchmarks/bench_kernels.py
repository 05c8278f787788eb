"""Timing comparison of the compiled and plain-numpy kernel paths.

Run as a script:

    python3 benchmarks/bench_kernels.py
    PFLAT_NO_NUMBA=1 python3 benchmarks/bench_kernels.py   # numpy only

The compiled path is whatever the package bound at import (numba unless
disabled or unavailable); the *_np functions are always the pure-numpy
reference, so the two columns are directly comparable in one process.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from promptflat import kernels
from promptflat.seeding import rng_from


def _time_best(fn, *args, repeats: int = 5) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def _fmt_ms(seconds: float) -> str:
    return f"{seconds * 1e3:9.2f} ms"


def bench_divergence(n: int, labels: int, k: int, repeats: int) -> None:
    rng = rng_from(0, "bench-div", n, labels, k)
    base = kernels.softmax_rows_np(rng.standard_normal((n, labels)))
    pert = kernels.softmax_rows_np(
        rng.standard_normal((k, n, labels)).reshape(-1, labels)
    ).reshape(k, n, labels)

    args = (base, pert, True, kernels.PROB_FLOOR)
    kernels.divergence_partials(*args)  # warm the JIT cache
    fast = _time_best(kernels.divergence_partials, *args, repeats=repeats)
    ref = _time_best(kernels.divergence_partials_np, *args, repeats=repeats)
    close = np.allclose(kernels.divergence_partials(*args),
                        kernels.divergence_partials_np(*args),
                        rtol=1e-10, atol=1e-12)
    print(f"divergence_partials     n={n:<6} L={labels} k={k:<4}"
          f" bound={_fmt_ms(fast)}  numpy={_fmt_ms(ref)}"
          f"  speedup={ref / fast:5.2f}x  agree={close}")


def bench_logistic(n: int, labels: int, dim: int, k: int, repeats: int) -> None:
    rng = rng_from(0, "bench-logit", n, labels, dim, k)
    phi = rng.random((n, dim)) * (rng.random((n, dim)) < 0.1)
    base = kernels.softmax_rows_np(rng.standard_normal((n, labels)))
    params = rng.standard_normal((k, labels * dim)) * 0.05

    args = (params, phi, base, True, kernels.PROB_FLOOR)
    kernels.logistic_divergence_partials(*args)  # warm the JIT cache
    fast = _time_best(kernels.logistic_divergence_partials, *args,
                      repeats=repeats)
    ref = _time_best(kernels.logistic_divergence_partials_np, *args,
                     repeats=repeats)
    close = np.allclose(kernels.logistic_divergence_partials(*args),
                        kernels.logistic_divergence_partials_np(*args),
                        rtol=1e-10, atol=1e-12)
    print(f"logistic_divergence     n={n:<6} L={labels} d={dim} k={k:<4}"
          f" bound={_fmt_ms(fast)}  numpy={_fmt_ms(ref)}"
          f"  speedup={ref / fast:5.2f}x  agree={close}")


def bench_entropy(n: int, labels: int, repeats: int) -> None:
    rng = rng_from(0, "bench-ent", n, labels)
    probs = kernels.softmax_rows_np(rng.standard_normal((n, labels)))
    kernels.entropy_rows(probs)
    fast = _time_best(kernels.entropy_rows, probs, repeats=repeats)
    ref = _time_best(kernels.entropy_rows_np, probs, repeats=repeats)
    close = np.allclose(kernels.entropy_rows(probs),
                        kernels.entropy_rows_np(probs),
                        rtol=1e-10, atol=1e-12)
    print(f"entropy_rows            n={n:<6} L={labels}       "
          f" bound={_fmt_ms(fast)}  numpy={_fmt_ms(ref)}"
          f"  speedup={ref / fast:5.2f}x  agree={close}")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--big", action="store_true",
                        help="use the larger problem sizes")
    args = parser.parse_args()

    path = "numba" if kernels.USING_NUMBA else "numpy fallback"
    print(f"bound kernel path: {path}")
    if not kernels.USING_NUMBA:
        print("note: both columns run the numpy implementation")
    print()

    if args.big:
        bench_entropy(200_000, 5, args.repeats)
        bench_divergence(2_000, 5, 256, args.repeats)
        bench_logistic(512, 3, 300, 2_000, args.repeats)
    else:
        bench_entropy(50_000, 5, args.repeats)
        bench_divergence(500, 5, 128, args.repeats)
        bench_logistic(256, 3, 200, 500, args.repeats)


if __name__ == "__main__":
    main()
