"""Benchmark: compiled kernels vs the pure-Python fallback.

Run with ``python3 benchmarks/bench_kernels.py [--rows N]``.  Times each
kernel on randomized mixed-type columns at the given row count and prints
the per-kernel speedup.
"""

from __future__ import annotations

import argparse
import random
import time

from gridbook.engine.kernels import COMPILED, _fast_or_none, pure


def _fast_module():
    mod = _fast_or_none()
    if mod is None:
        raise SystemExit(
            "compiled kernels are not built; run pip install -e . first"
        )
    return mod


def make_inputs(rows: int, seed: int = 0):
    rng = random.Random(seed)
    pool = [None, 0, 1, -3, 2.5, 7.0, "a", "b", "north", "", "12"]
    numbers = [rng.choice([None, 1, 2, 2.5, -3.0, 17]) for _ in range(rows)]
    col_a = [rng.choice(pool) for _ in range(rows)]
    col_b = [rng.choice(pool) for _ in range(rows)]
    keys = [rng.choice(["g1", "g2", "g3", None, "g4"]) for _ in range(rows)]
    indices = list(range(rows))
    rng.shuffle(indices)
    return {
        "sort_indices": (indices, [(col_a, False), (col_b, True)]),
        "group_rows": ([keys, col_a], indices),
        "fill_down": (numbers,),
        "running_sum": (numbers,),
        "moving_average": (numbers, 7),
    }


def bench(fn, args, repeat: int = 5) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--rows", type=int, default=200_000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    fast = _fast_module()
    inputs = make_inputs(args.rows, args.seed)
    print(f"rows={args.rows}  (compiled extension loaded: {COMPILED})")
    print(f"{'kernel':<16} {'pure':>10} {'compiled':>10} {'speedup':>8}")
    for name, call_args in inputs.items():
        t_pure = bench(getattr(pure, name), call_args)
        t_fast = bench(getattr(fast, name), call_args)
        ratio = t_pure / t_fast if t_fast else float("inf")
        print(f"{name:<16} {t_pure*1e3:9.1f}ms {t_fast*1e3:9.1f}ms "
              f"{ratio:7.2f}x")


if __name__ == "__main__":
    main()
