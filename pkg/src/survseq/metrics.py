"""Time-dependent concordance, Brier score, and horizon-based evaluation.

C_td(tau, k) scores how often the model ranks the subject with the earlier
event as higher risk, over pairs (i, j) where subject i had event k by tau
and subject j outlived subject i. Pairs are weighted by the anchor's
squared inverse-censoring weight. The Brier score is the mean squared gap
between predicted event probability by tau and the observed indicator,
with subjects censored before tau dropped.

Evaluation horizons are the 25/50/75 percent quantiles of the evaluation
split's uncensored durations.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import NoComparablePairs, NoScoreableSubjects
from .timegrid import bin_index, censoring_weights, quantile_horizons


def c_td(risk, durations, events, tau: float, k: int = 1,
         ipcw=None) -> tuple[float, int]:
    """Weighted concordant fraction and the comparable-pair count.

    Anchors are subjects with event k at or before tau; partners are
    subjects with strictly later observed times. Risk ties earn half
    credit; time ties are not comparable.
    """
    risk = np.ascontiguousarray(risk, dtype=np.float64)
    durations = np.ascontiguousarray(durations, dtype=np.float64)
    events = np.ascontiguousarray(events, dtype=np.int64)
    if ipcw is None:
        weights = np.ones(len(risk))
    else:
        weights = np.ascontiguousarray(ipcw, dtype=np.float64)
    num, den, n_pairs = _kernels.ctd_counts(
        risk, durations, events, int(k), float(tau), weights)
    if n_pairs == 0 or den <= 0.0:
        raise NoComparablePairs(
            f"no comparable pairs for event {k} at horizon {tau}")
    return float(num / den), int(n_pairs)


def brier(survival_at_tau, durations, events, tau: float,
          ipcw=None) -> float:
    """Mean squared discrepancy at horizon tau.

    Outcome is 1 when the event occurred by tau, 0 when the subject is
    known event-free past tau; censored-before-tau subjects are excluded.
    Passing ipcw switches to a weighted mean over the scoreable subjects.
    """
    f = np.asarray(survival_at_tau, dtype=np.float64)
    f = 1.0 - f
    durations = np.asarray(durations, dtype=np.float64)
    events = np.asarray(events)
    had_event = (durations <= tau) & (events > 0)
    beyond = durations > tau
    scoreable = had_event | beyond
    if not scoreable.any():
        raise NoScoreableSubjects(f"no scoreable subjects at horizon {tau}")
    o = had_event[scoreable].astype(np.float64)
    sq = (f[scoreable] - o) ** 2
    if ipcw is None:
        return float(sq.mean())
    w = np.asarray(ipcw, dtype=np.float64)[scoreable]
    return float((w * sq).sum() / w.sum())


@dataclass(frozen=True)
class MetricRow:
    event: int
    quantile: float
    tau: float
    c_td: float
    brier: float
    n_pairs: int


@dataclass
class MetricReport:
    rows: list[MetricRow] = field(default_factory=list)

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("event,quantile,tau,c_td,brier,n_pairs\n")
        for r in self.rows:
            out.write(f"{r.event},{r.quantile:g},{r.tau:.10g},"
                      f"{r.c_td:.10g},{r.brier:.10g},{r.n_pairs}\n")
        return out.getvalue()

    def format_table(self) -> str:
        header = ("event", "quantile", "tau", "c_td", "brier", "n_pairs")
        cells = [header] + [
            (str(r.event), f"{r.quantile:g}", f"{r.tau:.4g}",
             f"{r.c_td:.4f}", f"{r.brier:.4f}", str(r.n_pairs))
            for r in self.rows
        ]
        widths = [max(len(row[i]) for row in cells) for i in range(6)]
        lines = ["  ".join(c.rjust(w) for c, w in zip(row, widths))
                 for row in cells]
        return "\n".join(lines)

    def lookup(self, event: int, quantile: float) -> MetricRow:
        for r in self.rows:
            if r.event == event and abs(r.quantile - quantile) < 1e-12:
                return r
        raise KeyError((event, quantile))


def survival_at(pred, grid, tau: float) -> np.ndarray:
    """Step-interpolated survival at tau for each subject and event:
    the curve value entering the bin that contains tau (exact at bin
    boundaries, right-continuous inside bins). Shape (n, K)."""
    idx = int(bin_index(tau, grid))
    return pred.survival[..., idx]


def evaluate_model(trained, test, quantiles=(0.25, 0.5, 0.75)
                   ) -> MetricReport:
    """Fill a report with C_td and Brier for every event type at each
    quantile horizon of the evaluation split's uncensored durations."""
    from .dataset import check_schema_compatible, conform_max_visits
    from .survival_head import predict_sequences

    check_schema_compatible(trained.schema, test.schema)
    test = conform_max_visits(test, trained.model.encoder.config.v_max)
    durations = test.durations()
    events = test.events()
    taus = quantile_horizons(durations, events, quantiles)
    pred = predict_sequences(test.visit_tensor(), test.mask_tensor(),
                             trained.model)
    weight_map = censoring_weights(test)
    weights = np.array([weight_map[pid] for pid in test.patient_ids()])

    report = MetricReport()
    n_events = trained.model.head.config.n_events
    for k in range(1, n_events + 1):
        # Competing events are definite non-occurrences of cause k, so they
        # enter the Brier outcome as event-free past any horizon.
        durations_k = durations.copy()
        events_k = np.where(events == k, 1, 0)
        competing = (events > 0) & (events != k)
        durations_k[competing] = np.inf
        for q, tau in zip(quantiles, taus):
            s_tau = survival_at(pred, trained.grid, tau)[:, k - 1]
            ctd, n_pairs = c_td(1.0 - s_tau, durations, events, tau, k,
                                ipcw=weights)
            bs = brier(s_tau, durations_k, events_k, tau)
            report.rows.append(MetricRow(
                event=k, quantile=float(q), tau=float(tau),
                c_td=ctd, brier=bs, n_pairs=n_pairs))
    return report
