"""Compare the compiled and pure-Python clustering kernels.

Runs the community-detection pass over the same graphs with both backends,
checks the partitions and quality traces match exactly, and reports the
median wall time of each. Exits non-zero if the backends disagree.

Usage: python benchmarks/bench_kernels.py [--repeats 3]
"""

import argparse
import sys
import time

import numpy as np

from citeweave.community import QualityConfig, leiden
from citeweave.kernels import _pure

try:
    from citeweave.kernels import _core
except ImportError:
    _core = None


def random_edges(rng, n, m):
    pairs = set()
    while len(pairs) < m:
        u, v = rng.integers(0, n, size=2)
        if u != v:
            pairs.add((min(int(u), int(v)), max(int(u), int(v))))
    return np.array(sorted(pairs), dtype=np.int64)


def median_time(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    if _core is None:
        print("compiled kernels are not built; nothing to compare", file=sys.stderr)
        return 2

    cases = [
        ("n=1k  E=5k   rb unweighted", 1_000, 5_000, "rb", False),
        ("n=1k  E=5k   cpm weighted", 1_000, 5_000, "cpm", True),
        ("n=5k  E=30k  rb unweighted", 5_000, 30_000, "rb", False),
        ("n=10k E=60k  rb weighted", 10_000, 60_000, "rb", True),
    ]

    print(f"{'case':<30} {'pure':>10} {'cython':>10} {'speedup':>9}")
    ok = True
    for label, n, m, mode, weighted in cases:
        rng = np.random.default_rng(hash(label) & 0xFFFF)
        edges = random_edges(rng, n, m)
        weights = rng.uniform(0.1, 1.0, size=m) if weighted else None
        cfg = QualityConfig(function=mode, resolution=0.5, use_weights=weighted, seed=1)

        trace_p: list = []
        trace_c: list = []
        part_p = leiden(edges, n, cfg, weights=weights, trace=trace_p, kernel_impl=_pure)
        part_c = leiden(edges, n, cfg, weights=weights, trace=trace_c, kernel_impl=_core)
        if not np.array_equal(part_p.assignment, part_c.assignment) or trace_p != trace_c:
            print(f"{label:<30} BACKENDS DISAGREE", file=sys.stderr)
            ok = False
            continue

        t_pure = median_time(
            lambda: leiden(edges, n, cfg, weights=weights, kernel_impl=_pure), args.repeats
        )
        t_core = median_time(
            lambda: leiden(edges, n, cfg, weights=weights, kernel_impl=_core), args.repeats
        )
        print(f"{label:<30} {t_pure:>9.3f}s {t_core:>9.3f}s {t_pure / t_core:>8.1f}x")

    if ok:
        print("backends agree on every case")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
