"""Timings for the report-simulation kernels: compiled extension vs numpy.

Run from the repo root after an editable install:

    python benchmarks/bench_kernels.py --users 2000000 --domain 64
"""

import argparse
import time

import numpy as np

from fedhh._kernels import _numpy as numpy_backend

try:
    from fedhh._kernels import _fastkern as fast_backend
except ImportError:
    fast_backend = None


def _time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench(backend, name, n, d, repeat):
    user_index = np.arange(n, dtype=np.int64)
    true_index = np.random.default_rng(3).integers(0, d, size=n)
    epsilon = 4.0
    e = np.exp(epsilon)
    p_krr = e / (d - 1 + e)
    q_oue = 1.0 / (e + 1.0)
    d_prime = int(np.ceil(e + 1))
    p_olh = e / (d_prime - 1 + e)

    rows = []
    rows.append(("krr_counts", _time(lambda: backend.krr_counts(11, user_index, true_index, d, p_krr), repeat)))
    rows.append(("oue_counts", _time(lambda: backend.oue_counts(12, user_index, true_index, d, q_oue), repeat)))

    def olh_run():
        seeds, buckets = backend.olh_reports(13, 14, user_index, true_index, d_prime, p_olh)
        backend.olh_support_counts(seeds, buckets, d, d_prime)

    rows.append(("olh_full", _time(olh_run, repeat)))
    print(f"\n{name} backend ({n} users, domain {d}):")
    for label, seconds in rows:
        print(f"  {label:<18} {seconds * 1000:9.1f} ms   {n / seconds / 1e6:8.1f} M users/s")
    return dict(rows)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--users", type=int, default=2_000_000)
    parser.add_argument("--domain", type=int, default=64)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()

    numpy_times = bench(numpy_backend, "numpy", args.users, args.domain, args.repeat)
    if fast_backend is None:
        print("\ncompiled extension not available; nothing to compare")
        return
    fast_times = bench(fast_backend, "cython", args.users, args.domain, args.repeat)
    print("\nspeedups (numpy time / cython time):")
    for label in numpy_times:
        print(f"  {label:<18} {numpy_times[label] / fast_times[label]:6.2f}x")


if __name__ == "__main__":
    main()
