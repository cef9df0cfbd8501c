"""Compare the compiled kernels with their pure-Python twins.

    python benchmarks/bench_kernels.py            # quick sizes
    python benchmarks/bench_kernels.py --full     # top-15 subsets, S=2000, C=7

Each kernel is run on identical inputs in both backends; the script checks
that the outputs agree bit for bit and prints wall times and the speedup.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from lesionkit import _pure
from lesionkit.meta import rbf_gram

try:
    from lesionkit import _ext
except ImportError:  # extension not built
    _ext = None


def timed(fn, *args, repeat=1):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b), equal_nan=True)


def cases(full: bool, threads: int):
    rng = np.random.default_rng(0)
    K, S, C = (15, 2000, 7) if full else (11, 1000, 7)
    P = rng.random((K, S, C)) + 1e-3
    P /= P.sum(axis=-1, keepdims=True)
    truth = np.concatenate([np.arange(C), rng.integers(0, C, S - C)]).astype(np.int64)
    support = np.bincount(truth, minlength=C).astype(np.float64)
    winners = np.ascontiguousarray(P.argmax(axis=2), dtype=np.int64)
    yield f"subset average K={K} S={S} C={C}", "subset_wacc_average", (P, truth, support, threads)
    yield f"subset vote    K={K} S={S} C={C}", "subset_wacc_vote", (winners, truth, support, C, threads)

    n = 400 if full else 200
    X = rng.normal(size=(n, 8))
    y = np.where(X[:, 0] + 0.5 * rng.normal(size=n) > 0, 1.0, -1.0)
    K_gram = rbf_gram(X, X, 0.125)
    yield f"smo            S={n} C_reg=1", "smo", (K_gram, y, 1.0, 1e-3, 200, 0)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--full", action="store_true")
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args()
    if _ext is None:
        raise SystemExit("compiled extension not available; build with `pip install -e .`")
    print(f"{'kernel':34s} {'compiled':>10s} {'python':>10s} {'speedup':>8s}  identical")
    for label, name, inputs in cases(args.full, args.threads):
        t_ext, out_ext = timed(getattr(_ext, name), *inputs)
        t_py, out_py = timed(getattr(_pure, name), *inputs)
        print(f"{label:34s} {t_ext:9.3f}s {t_py:9.3f}s {t_py / t_ext:7.1f}x  {same(out_ext, out_py)}")


if __name__ == "__main__":
    main()
