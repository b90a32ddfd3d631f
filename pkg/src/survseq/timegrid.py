"""Discrete time axis, Kaplan-Meier curves and censoring weights.

Event time is discretized into quantile bins of the uncensored durations so
each bin carries comparable event mass. The same product-limit estimator
serves three purposes: survival curves for reporting, the censoring
distribution G behind the inverse-probability weights, and the curves that
the synthetic-data optimism score integrates over.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import InsufficientEvents, NoEvents

IPCW_CLAMP = 20.0


@dataclass(frozen=True)
class TimeGrid:
    """Ascending bin boundaries; boundaries[0] = 0, boundaries[-1] = max
    observed duration. Bin b covers [boundaries[b], boundaries[b+1])."""

    boundaries: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=np.float64)
        object.__setattr__(self, "boundaries", b)
        if b.ndim != 1 or b.size < 2:
            raise ValueError("need at least two boundaries")
        if not np.all(np.diff(b) > 0):
            raise ValueError("boundaries must be strictly increasing")

    @property
    def n_bins(self) -> int:
        return self.boundaries.size - 1

    @property
    def max_time(self) -> float:
        return float(self.boundaries[-1])


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous step function; value 1 before the first step time."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)
        if t.shape != v.shape or t.ndim != 1:
            raise ValueError("times and values must be 1-D and equal length")
        if t.size and np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")

    def __call__(self, t):
        """Value at t (right-continuous: steps already taken at t count)."""
        idx = np.searchsorted(self.times, np.asarray(t, dtype=np.float64),
                              side="right")
        padded = np.concatenate(([1.0], self.values))
        return padded[idx]

    def left_limit(self, t):
        """Value just before t; steps exactly at t do not count."""
        idx = np.searchsorted(self.times, np.asarray(t, dtype=np.float64),
                              side="left")
        padded = np.concatenate(([1.0], self.values))
        return padded[idx]


def fit_time_bins(durations, events, n_bins: int) -> TimeGrid:
    """Quantile bins over uncensored durations, spanning [0, max duration]."""
    durations = np.asarray(durations, dtype=np.float64)
    events = np.asarray(events)
    uncensored = durations[events > 0]
    n_distinct = np.unique(uncensored).size
    if n_distinct < n_bins:
        raise InsufficientEvents(
            f"need at least {n_bins} distinct uncensored durations, have {n_distinct}"
        )
    interior = np.quantile(uncensored, np.arange(1, n_bins) / n_bins,
                           method="linear")
    boundaries = np.concatenate(([0.0], interior, [durations.max()]))
    if np.any(np.diff(boundaries) <= 0):
        # heavy duplication can collapse adjacent quantiles even when the
        # distinct count clears n_bins
        raise InsufficientEvents(
            "quantile boundaries collide; reduce the bin count"
        )
    return TimeGrid(boundaries)


def bin_index(t, grid: TimeGrid):
    """Bin b with boundaries[b] <= t < boundaries[b+1]; clamps to the last
    bin for t at or beyond the final boundary."""
    idx = np.searchsorted(grid.boundaries, np.asarray(t, dtype=np.float64),
                          side="right") - 1
    return np.clip(idx, 0, grid.n_bins - 1)


def kaplan_meier(durations, events) -> StepFunction:
    """Product-limit estimate; ``events`` flags the event being estimated
    (1 = observed, 0 = censored for this purpose)."""
    durations = np.asarray(durations, dtype=np.float64)
    flags = (np.asarray(events) > 0).astype(np.float64)
    order = np.argsort(durations, kind="stable")
    times, values = _kernels.km_steps(durations[order], flags[order])
    return StepFunction(times, values)


def censoring_weights(dataset) -> dict[str, float]:
    """IPCW weights per patient: 1/G(t-) for uncensored subjects, clamped to
    IPCW_CLAMP and normalized to mean 1 over the uncensored; censored
    subjects get weight 1."""
    durations = np.array([s.duration for s in dataset.sequences])
    events = np.array([s.event for s in dataset.sequences])
    ids = [s.patient_id for s in dataset.sequences]

    g = kaplan_meier(durations, events == 0)
    uncensored = events > 0
    weights = np.ones(len(ids))
    if uncensored.any():
        g_left = np.maximum(g.left_limit(durations[uncensored]), 1e-12)
        w = np.minimum(1.0 / g_left, IPCW_CLAMP)
        weights[uncensored] = w / w.mean()
    return dict(zip(ids, weights))


def quantile_horizons(durations, events, quantiles) -> np.ndarray:
    durations = np.asarray(durations, dtype=np.float64)
    events = np.asarray(events)
    uncensored = durations[events > 0]
    if uncensored.size == 0:
        raise NoEvents("no uncensored durations to take quantiles of")
    return np.quantile(uncensored, np.asarray(quantiles), method="linear")
