"""Hot numeric kernels, numba-jitted with pure-numpy fallbacks.

The pairwise concordance count is O(n^2) and the Kaplan-Meier walk is the
other loop that shows up in profiles; everything else in the package is
BLAS-bound numpy and gains nothing from jitting. Set ``SURVSEQ_NUMBA=0`` to
force the numpy path (the default uses numba when importable).
``benchmarks/bench_kernels.py`` compares both.
"""

from __future__ import annotations

import os

import numpy as np


def _numba_wanted() -> bool:
    flag = os.environ.get("SURVSEQ_NUMBA", "").strip().lower()
    return flag not in ("0", "false", "off", "no")


# --- pure-numpy implementations ---

def km_steps_numpy(times_sorted: np.ndarray, events_sorted: np.ndarray):
    """Product-limit steps over pre-sorted (time, event-flag) pairs.

    Returns (step_times, step_values): distinct event times and the survival
    value just after each.
    """
    n = times_sorted.shape[0]
    uniq, first_idx = np.unique(times_sorted, return_index=True)
    at_risk = n - first_idx
    deaths = np.add.reduceat(events_sorted.astype(np.float64), first_idx)
    keep = deaths > 0
    factors = 1.0 - deaths[keep] / at_risk[keep]
    return uniq[keep], np.cumprod(factors)


def ctd_counts_numpy(risk, durations, events, k, tau, weights):
    """Weighted concordant/total pair sums for C_td(tau, k).

    Anchors i have event k and t_i <= tau; partners j have t_j > t_i. Each
    pair carries weight w_i^2; a risk tie counts half. Returns
    (concordant_sum, total_sum, n_pairs).
    """
    anchor = (events == k) & (durations <= tau)
    if not anchor.any():
        return 0.0, 0.0, 0
    later = durations[:, None] < durations[None, :]
    pairs = anchor[:, None] & later
    w2 = (weights * weights)[:, None]
    credit = (risk[:, None] > risk[None, :]) + 0.5 * (risk[:, None] == risk[None, :])
    num = float((w2 * credit * pairs).sum())
    den = float((w2 * pairs).sum())
    return num, den, int(pairs.sum())


# --- numba twins ---

_HAVE_NUMBA = False
if _numba_wanted():
    try:
        from numba import njit
        _HAVE_NUMBA = True
    except ImportError:
        pass

if _HAVE_NUMBA:

    @njit(cache=True)
    def _km_steps_jit(times_sorted, events_sorted):
        n = times_sorted.shape[0]
        out_t = np.empty(n, dtype=np.float64)
        out_v = np.empty(n, dtype=np.float64)
        surv = 1.0
        n_out = 0
        i = 0
        while i < n:
            t = times_sorted[i]
            at_risk = n - i
            deaths = 0.0
            while i < n and times_sorted[i] == t:
                deaths += events_sorted[i]
                i += 1
            if deaths > 0.0:
                surv *= 1.0 - deaths / at_risk
                out_t[n_out] = t
                out_v[n_out] = surv
                n_out += 1
        return out_t[:n_out], out_v[:n_out]

    @njit(cache=True)
    def _ctd_counts_jit(risk, durations, events, k, tau, weights):
        n = risk.shape[0]
        num = 0.0
        den = 0.0
        n_pairs = 0
        for i in range(n):
            if events[i] != k or durations[i] > tau:
                continue
            w2 = weights[i] * weights[i]
            for j in range(n):
                if durations[j] <= durations[i]:
                    continue
                n_pairs += 1
                den += w2
                if risk[i] > risk[j]:
                    num += w2
                elif risk[i] == risk[j]:
                    num += 0.5 * w2
        return num, den, n_pairs

    def km_steps_numba(times_sorted, events_sorted):
        return _km_steps_jit(
            np.ascontiguousarray(times_sorted, dtype=np.float64),
            np.ascontiguousarray(events_sorted, dtype=np.float64),
        )

    def ctd_counts_numba(risk, durations, events, k, tau, weights):
        num, den, n_pairs = _ctd_counts_jit(
            np.ascontiguousarray(risk, dtype=np.float64),
            np.ascontiguousarray(durations, dtype=np.float64),
            np.ascontiguousarray(events, dtype=np.int64),
            int(k),
            float(tau),
            np.ascontiguousarray(weights, dtype=np.float64),
        )
        return float(num), float(den), int(n_pairs)

    km_steps = km_steps_numba
    ctd_counts = ctd_counts_numba
    BACKEND = "numba"
else:
    km_steps = km_steps_numpy
    ctd_counts = ctd_counts_numpy
    BACKEND = "numpy"
