"""Timing comparison for the jitted survival kernels vs their numpy twins.

Runs the pairwise concordance counter and the Kaplan-Meier walk at a few
problem sizes and reports the best-of-N wall time for each backend. The
numba path needs one warm-up call to compile; that cost is excluded.

Usage: python3 benchmarks/bench_kernels.py [--sizes 500,2000,8000] [--repeat 5]
"""

import argparse
import time

import numpy as np

from survseq import _kernels


def make_instance(n, seed):
    rng = np.random.default_rng(seed)
    risk = rng.normal(size=n)
    durations = rng.exponential(5.0, size=n) + 0.05
    events = np.where(rng.random(n) > 0.3, 1, 0).astype(np.int64)
    weights = rng.uniform(0.5, 2.0, size=n)
    tau = float(np.quantile(durations[events > 0], 0.5))
    order = np.argsort(durations)
    return {
        "risk": risk, "durations": durations, "events": events,
        "weights": weights, "tau": tau,
        "times_sorted": durations[order],
        "events_sorted": events[order].astype(np.float64),
    }


def best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", default="500,2000,8000",
                        help="comma-separated subject counts")
    parser.add_argument("--repeat", type=int, default=5,
                        help="take the best of this many runs")
    args = parser.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    have_numba = _kernels.BACKEND == "numba"
    if not have_numba:
        print("numba unavailable or disabled (SURVSEQ_NUMBA); "
              "timing the numpy path only")
    else:
        warm = make_instance(64, 0)
        _kernels.ctd_counts_numba(warm["risk"], warm["durations"],
                                  warm["events"], 1, warm["tau"],
                                  warm["weights"])
        _kernels.km_steps_numba(warm["times_sorted"], warm["events_sorted"])

    header = f"{'kernel':<12} {'n':>7} {'numpy':>12} {'numba':>12} {'speedup':>9}"
    print(header)
    print("-" * len(header))
    for n in sizes:
        inst = make_instance(n, seed=n)

        def ctd_numpy():
            return _kernels.ctd_counts_numpy(
                inst["risk"], inst["durations"], inst["events"], 1,
                inst["tau"], inst["weights"])

        def km_numpy():
            return _kernels.km_steps_numpy(inst["times_sorted"],
                                           inst["events_sorted"])

        t_ctd_np = best_of(ctd_numpy, args.repeat)
        t_km_np = best_of(km_numpy, args.repeat)

        if have_numba:
            def ctd_nb():
                return _kernels.ctd_counts_numba(
                    inst["risk"], inst["durations"], inst["events"], 1,
                    inst["tau"], inst["weights"])

            def km_nb():
                return _kernels.km_steps_numba(inst["times_sorted"],
                                               inst["events_sorted"])

            t_ctd_nb = best_of(ctd_nb, args.repeat)
            t_km_nb = best_of(km_nb, args.repeat)

            num_np, den_np, pairs_np = ctd_numpy()
            num_nb, den_nb, pairs_nb = ctd_nb()
            assert pairs_np == pairs_nb
            # summation order differs between backends; drift grows with
            # the pair count, so compare relatively with room to spare
            assert abs(num_np / den_np - num_nb / den_nb) < 1e-9 * (num_np / den_np)

            print(f"{'ctd_counts':<12} {n:>7} {t_ctd_np:>11.4f}s "
                  f"{t_ctd_nb:>11.4f}s {t_ctd_np / t_ctd_nb:>8.1f}x")
            print(f"{'km_steps':<12} {n:>7} {t_km_np:>11.6f}s "
                  f"{t_km_nb:>11.6f}s {t_km_np / t_km_nb:>8.1f}x")
        else:
            print(f"{'ctd_counts':<12} {n:>7} {t_ctd_np:>11.4f}s "
                  f"{'-':>12} {'-':>9}")
            print(f"{'km_steps':<12} {n:>7} {t_km_np:>11.6f}s "
                  f"{'-':>12} {'-':>9}")


if __name__ == "__main__":
    main()
