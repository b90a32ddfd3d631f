"""Synthetic patient generation and the optimism divergence.

The baseline generator is a stratified bootstrap with jitter: patients are
resampled with replacement within (event, duration-quartile) strata in
proportion to each stratum's share of training visits, Gaussian noise
scaled to per-feature standard deviations perturbs the normalized
numerical columns, categoricals are redrawn from their within-stratum
empirical frequencies, and durations get a small uniform multiplicative
jitter. The synthetic visit count hits the requested fraction of training
visits exactly (the last sampled sequence is truncated if needed).

Optimism compares Kaplan-Meier curves of synthetic and real data:
    optimism = integral of f(t) * [p_syn(t) - p_real(t)] dt
with f(t) = t/T on [0, T] and 1 afterwards, integrated exactly over the
step pieces up to the last observed time. Zero means the synthetic cohort
reproduces the real survival behavior.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .dataset import PatientSequence, SurvivalDataset, check_schema_compatible
from .errors import NoEvents, SchemaMismatch
from .timegrid import StepFunction, kaplan_meier

SYNTHETIC_PREFIX = "syn::"


@dataclass(frozen=True)
class GeneratorConfig:
    kind: str = "bootstrap_jitter"
    fraction: float = 0.5
    jitter_scale: float = 0.1
    duration_jitter: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.kind != "bootstrap_jitter":
            raise ValueError(f"unknown generator kind {self.kind!r}")
        if self.fraction <= 0:
            raise ValueError("fraction must be > 0")
        if self.jitter_scale < 0 or self.duration_jitter < 0:
            raise ValueError("jitter scales must be >= 0")


def _strata(durations: np.ndarray, events: np.ndarray) -> np.ndarray:
    """Stratum id per patient: event label crossed with duration quartile."""
    qs = np.quantile(durations, [0.25, 0.5, 0.75])
    quartile = np.searchsorted(qs, durations, side="left")
    return events * 4 + quartile


def _apportion(visit_counts: np.ndarray, target: int) -> np.ndarray:
    """Largest-remainder split of `target` across strata, proportional to
    visit counts."""
    total = visit_counts.sum()
    raw = target * visit_counts / total
    base = np.floor(raw).astype(int)
    short = target - base.sum()
    remainders = raw - base
    for idx in np.argsort(-remainders, kind="stable")[:short]:
        base[idx] += 1
    return base


def generate(train: SurvivalDataset, config: GeneratorConfig
             ) -> SurvivalDataset:
    """Synthetic-only dataset whose visit count is
    round(fraction * training visits), deterministic per seed."""
    if not train.sequences:
        raise ValueError("cannot generate from an empty dataset")
    rng = np.random.default_rng(config.seed)
    schema = train.schema
    n_num = schema.n_num
    durations = train.durations()
    events = train.events()
    visit_counts = np.array([s.n_real for s in train.sequences])
    target = int(round(config.fraction * visit_counts.sum()))

    strata = _strata(durations, events)
    stratum_ids = np.unique(strata)
    stratum_visits = np.array([visit_counts[strata == s].sum()
                               for s in stratum_ids])
    quotas = _apportion(stratum_visits, target)

    # noise scale per normalized numerical column, from real visit rows
    real_rows = np.concatenate([s.visits[:s.n_real]
                                for s in train.sequences])
    num_std = real_rows[:, :n_num].std(axis=0) if n_num else np.zeros(0)

    # per-stratum empirical one-hot frequencies for categorical redraws
    cat_slices = []
    offset = n_num
    for feat in schema.categorical:
        width = len(feat.vocabulary)
        cat_slices.append(slice(offset, offset + width))
        offset += width

    sequences = []
    counter = 0
    for sid, quota in zip(stratum_ids, quotas):
        members = np.flatnonzero(strata == sid)
        member_rows = None
        if config.jitter_scale > 0 and cat_slices:
            member_rows = np.concatenate(
                [train.sequences[i].visits[:train.sequences[i].n_real]
                 for i in members])
        produced = 0
        while produced < quota:
            src = train.sequences[int(rng.choice(members))]
            take = min(src.n_real, quota - produced)
            seq = _synthesize_one(src, take, counter, schema, num_std,
                                  member_rows, cat_slices, config, rng,
                                  train.v_max)
            sequences.append(seq)
            produced += take
            counter += 1

    return SurvivalDataset(schema=schema, sequences=sequences,
                           v_max=train.v_max, n_events=train.n_events)


def _synthesize_one(src: PatientSequence, take: int, counter: int, schema,
                    num_std, member_rows, cat_slices,
                    config: GeneratorConfig, rng: np.random.Generator,
                    v_max: int) -> PatientSequence:
    n_num = schema.n_num
    visits = np.zeros((v_max, schema.encoded_width))
    visits[:take] = src.visits[:take]
    if config.jitter_scale > 0:
        if n_num:
            noise = rng.normal(0.0, 1.0, (take, n_num)) * \
                (config.jitter_scale * num_std)
            visits[:take, :n_num] = np.maximum(
                visits[:take, :n_num] + noise, 0.0)
        for sl in cat_slices:
            block = member_rows[:, sl]
            freqs = block.sum(axis=0)
            # rows with an unseen category are all-zero in this block;
            # keep that mass as "no category drawn"
            width = sl.stop - sl.start
            probs = np.zeros(width + 1)
            probs[:width] = freqs
            probs[width] = len(block) - freqs.sum()
            probs = probs / probs.sum()
            draws = rng.choice(width + 1, size=take, p=probs)
            visits[:take, sl] = 0.0
            rows = np.arange(take)
            seen = draws < width
            visits[rows[seen], sl.start + draws[seen]] = 1.0
    duration = src.duration
    if config.duration_jitter > 0:
        duration = duration * (
            1.0 + rng.uniform(-config.duration_jitter,
                              config.duration_jitter))
    mask = np.zeros(v_max)
    mask[:take] = 1.0
    return PatientSequence(
        patient_id=f"{SYNTHETIC_PREFIX}{src.patient_id}::{counter}",
        visits=visits,
        mask=mask,
        n_real=take,
        duration=float(duration),
        event=src.event,
    )


def augment(train: SurvivalDataset, synthetic: SurvivalDataset
            ) -> SurvivalDataset:
    """Concatenate real and synthetic patients under one schema."""
    try:
        check_schema_compatible(train.schema, synthetic.schema)
    except SchemaMismatch:
        raise
    if train.v_max != synthetic.v_max:
        raise SchemaMismatch(
            f"sequence lengths differ: {train.v_max} vs {synthetic.v_max}")
    return SurvivalDataset(
        schema=train.schema,
        sequences=list(train.sequences) + list(synthetic.sequences),
        v_max=train.v_max,
        n_events=max(train.n_events, synthetic.n_events),
    )


def is_synthetic_id(patient_id: str) -> bool:
    return patient_id.startswith(SYNTHETIC_PREFIX)


@dataclass(frozen=True)
class OptimismReport:
    value: float
    horizon: float
    curve_syn: StepFunction
    curve_real: StepFunction

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(f"optimism,{self.value:.10g}\n")
        out.write(f"horizon,{self.horizon:.10g}\n")
        out.write("curve,time,survival\n")
        for name, curve in (("synthetic", self.curve_syn),
                            ("real", self.curve_real)):
            out.write(f"{name},0,1\n")
            for t, v in zip(curve.times, curve.values):
                out.write(f"{name},{t:.10g},{v:.10g}\n")
        return out.getvalue()


def optimism_from_curves(curve_syn: StepFunction, curve_real: StepFunction,
                         horizon: float, upper: float) -> float:
    """Exact integral of f(t) * [syn(t) - real(t)] over [0, upper] with
    f(t) = t/horizon below the horizon and 1 beyond it."""
    if horizon <= 0:
        raise ValueError("horizon must be > 0")
    cuts = np.unique(np.concatenate((
        [0.0, horizon, upper], curve_syn.times, curve_real.times)))
    cuts = cuts[(cuts >= 0.0) & (cuts <= upper)]
    if cuts.size == 0 or cuts[-1] < upper:
        cuts = np.append(cuts, upper)
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        mid = 0.5 * (a + b)
        delta = float(curve_syn(mid)) - float(curve_real(mid))
        if b <= horizon:
            piece = (b * b - a * a) / (2.0 * horizon)
        else:
            piece = b - a
        total += delta * piece
    return total


def optimism(real: SurvivalDataset, synthetic: SurvivalDataset,
             horizon: float) -> OptimismReport:
    """Weighted survival-curve divergence between the two cohorts."""
    for name, ds in (("real", real), ("synthetic", synthetic)):
        if not (ds.events() > 0).any():
            raise NoEvents(f"{name} dataset has no events")
    if horizon <= 0:
        raise ValueError("horizon must be > 0")
    curve_real = kaplan_meier(real.durations(), real.events())
    curve_syn = kaplan_meier(synthetic.durations(), synthetic.events())
    upper = float(max(real.durations().max(), synthetic.durations().max()))
    value = optimism_from_curves(curve_syn, curve_real, horizon, upper)
    return OptimismReport(value=value, horizon=horizon,
                          curve_syn=curve_syn, curve_real=curve_real)
