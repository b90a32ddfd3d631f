"""Adam optimization, gamma annealing, early stopping, K-fold CV, and
checkpoint persistence.

A training run fits the time grid and censoring weights on its training
split, minimizes the composite loss with mini-batch Adam (decoupled weight
decay), linearly anneals the auxiliary-loss gammas from their initial
values to 0 over the first half of the epoch budget, and early-stops on
the validation discrete-hazard loss, restoring the best weights seen.

Cross-validation assigns whole patients to folds, optionally augments each
fold's training portion with synthetic patients (validation and held-out
folds stay real), and aggregates per-fold metric reports into mean/std.
"""

from __future__ import annotations

import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .config import dump_kv, parse_kv
from .container import CHECKPOINT_MAGIC, read_container, write_container
from .dataset import (
    FeatureSchema,
    SurvivalDataset,
    schema_from_meta,
    schema_to_meta,
)
from .encoder import EncoderConfig
from .errors import ConfigError, NonFiniteLoss, TooFewPatients
from .metrics import MetricReport, evaluate_model
from .numerics import Tape
from .survival_head import (
    HeadConfig,
    SurvivalModel,
    TrainingBatch,
    batch_pch_loss,
    combined_loss,
    predict_sequences,
)
from .timegrid import TimeGrid, bin_index, censoring_weights, fit_time_bins

CHECKPOINT_FORMAT_VERSION = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    weight_decay: float = 1e-4
    n_layers: int = 2
    d_model: int = 16
    d_ff: int = 32
    n_heads: int = 2
    head_depth: int = 2
    n_features: int = 16
    n_bins: int = 10
    batch_size: int = 64
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0
    gamma1: float = 1.0
    gamma2: float = 1.0
    anneal_fraction: float = 0.5

    def validate(self, allow_out_of_range: bool = False) -> None:
        problems = []
        if not 1e-4 <= self.learning_rate <= 1e-3:
            problems.append("learning_rate outside [1e-4, 1e-3]")
        if not 0.0 <= self.weight_decay <= 1e-3:
            problems.append("weight_decay outside [0, 1e-3]")
        if not 2 <= self.n_layers <= 4:
            problems.append("n_layers outside [2, 4]")
        if self.d_model != 16:
            problems.append("d_model must be 16")
        if self.d_ff not in (32, 64):
            problems.append("d_ff must be 32 or 64")
        if self.n_heads not in (1, 2, 4):
            problems.append("n_heads must be 1, 2, or 4")
        if self.head_depth not in (1, 2):
            problems.append("head_depth must be 1 or 2")
        if not 15 <= self.n_features <= 30:
            problems.append("n_features outside [15, 30]")
        if problems and not allow_out_of_range:
            raise ConfigError("; ".join(problems))
        hard = []
        if self.learning_rate <= 0.0:
            hard.append("learning_rate must be > 0")
        if self.weight_decay < 0.0:
            hard.append("weight_decay must be >= 0")
        if self.n_bins < 1:
            hard.append("n_bins must be >= 1")
        if self.batch_size < 1:
            hard.append("batch_size must be >= 1")
        if self.max_epochs < 0 or self.patience < 0:
            hard.append("max_epochs and patience must be >= 0")
        if self.gamma1 < 0 or self.gamma2 < 0:
            hard.append("gamma values must be >= 0")
        if not 0.0 < self.anneal_fraction <= 1.0:
            hard.append("anneal_fraction must be in (0, 1]")
        if self.d_model % self.n_heads != 0:
            hard.append("d_model must be divisible by n_heads")
        if hard:
            raise ConfigError("; ".join(hard))

    def to_kv(self) -> str:
        return dump_kv({f.name: getattr(self, f.name)
                        for f in fields(self)})

    @classmethod
    def from_kv(cls, text: str) -> "TrainConfig":
        values = parse_kv(text)
        known = {f.name: f.type for f in fields(cls)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        kwargs = {}
        for key, raw in values.items():
            want_int = known[key] == "int" or known[key] is int
            try:
                kwargs[key] = int(raw) if want_int else float(raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key}: {raw!r}") from exc
        return cls(**kwargs)


def gamma_at(epoch: int, config: TrainConfig) -> tuple[float, float]:
    """Linear decay from the initial gammas to 0 across the first
    anneal_fraction of the epoch budget."""
    span = max(1, int(round(config.anneal_fraction * config.max_epochs)))
    factor = max(0.0, 1.0 - epoch / span)
    return config.gamma1 * factor, config.gamma2 * factor


class AdamState:
    def __init__(self, params):
        self.step = 0
        self.moments = {id(p): (np.zeros_like(p.data), np.zeros_like(p.data))
                        for p in params}


def adam_step(params, state: AdamState, lr: float,
              weight_decay: float) -> None:
    """Bias-corrected Adam update with decoupled weight decay; gradients
    are consumed (zeroed) by the step."""
    state.step += 1
    t = state.step
    for p in params:
        g = p.grad
        m, v = state.moments[id(p)]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        m_hat = m / (1.0 - ADAM_BETA1 ** t)
        v_hat = v / (1.0 - ADAM_BETA2 ** t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        if weight_decay:
            p.data -= lr * weight_decay * p.data
        p.zero_grad()


@dataclass
class HistoryRow:
    epoch: int
    train_loss: float
    val_loss: float
    gamma1: float
    gamma2: float


@dataclass
class TrainedModel:
    """Self-contained trained state: everything prediction needs."""

    model: SurvivalModel
    schema: FeatureSchema
    grid: TimeGrid
    config: TrainConfig
    history: list[HistoryRow] = field(default_factory=list)
    max_duration: float = 1.0


def history_csv(history) -> str:
    out = io.StringIO()
    out.write("epoch,train_loss,val_loss,gamma1,gamma2\n")
    for row in history:
        out.write(f"{row.epoch},{row.train_loss:.10g},{row.val_loss:.10g},"
                  f"{row.gamma1:.10g},{row.gamma2:.10g}\n")
    return out.getvalue()


def _dataset_arrays(dataset: SurvivalDataset, grid: TimeGrid,
                    weight_map, max_duration: float):
    visits = dataset.visit_tensor()
    mask = dataset.mask_tensor()
    durations = dataset.durations()
    events = dataset.events()
    bins = np.asarray(bin_index(durations, grid), dtype=np.int64)
    if weight_map is None:
        weights = np.ones(len(dataset))
    else:
        weights = np.array([weight_map[p] for p in dataset.patient_ids()])
    dur_norm = np.minimum(durations / max_duration, 1.0)
    return visits, mask, bins, events, weights, dur_norm


def _validation_loss(model: SurvivalModel, visits, mask, bins,
                     events) -> float:
    pred = predict_sequences(visits, mask, model)
    return batch_pch_loss(pred, bins, events, np.ones(len(bins)))


def _snapshot(model: SurvivalModel):
    return [p.data.copy() for p in model.parameters()]


def _restore(model: SurvivalModel, snapshot) -> None:
    for p, data in zip(model.parameters(), snapshot):
        p.data = data.copy()


def train(config: TrainConfig, train_set: SurvivalDataset,
          val_set: SurvivalDataset) -> TrainedModel:
    """Fit the model on train_set, early-stopping on val_set.

    Splits must not share patients. Deterministic for fixed
    (config, data): two runs produce identical weights and histories.
    """
    overlap = set(train_set.patient_ids()) & set(val_set.patient_ids())
    if overlap:
        raise ValueError(f"patients appear in both splits: {sorted(overlap)[:3]}")

    grid = fit_time_bins(train_set.durations(), train_set.events(),
                         config.n_bins)
    weight_map = censoring_weights(train_set)
    max_duration = float(train_set.durations().max())

    enc_cfg = EncoderConfig(
        encoded_width=train_set.schema.encoded_width,
        v_max=train_set.v_max,
        d_model=config.d_model,
        n_layers=config.n_layers,
        n_heads=config.n_heads,
        d_ff=config.d_ff,
        n_out=config.n_features,
    )
    head_cfg = HeadConfig(
        n_features=config.n_features,
        n_events=train_set.n_events,
        n_bins=config.n_bins,
        depth=config.head_depth,
        d_hidden=config.d_ff,
    )
    model = SurvivalModel.initialize(enc_cfg, head_cfg, config.seed)
    trained = TrainedModel(model=model, schema=train_set.schema, grid=grid,
                           config=config, history=[],
                           max_duration=max_duration)
    if config.max_epochs == 0:
        return trained

    visits, mask, bins, events, weights, dur_norm = _dataset_arrays(
        train_set, grid, weight_map, max_duration)
    val_visits, val_mask, val_bins, val_events, _, _ = _dataset_arrays(
        val_set, grid, None, max_duration)

    adam = AdamState(model.parameters())
    rng = np.random.default_rng(config.seed)
    n = len(train_set)
    best_val = np.inf
    best_weights = _snapshot(model)
    epochs_without_improvement = 0

    for epoch in range(config.max_epochs):
        g1, g2 = gamma_at(epoch, config)
        order = rng.permutation(n)
        batch_losses = []
        for bi, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            batch = TrainingBatch(
                visits=visits[idx], mask=mask[idx], bins=bins[idx],
                events=events[idx], weights=weights[idx],
                duration_norm=dur_norm[idx])
            with Tape() as tape:
                loss = combined_loss(batch, model, g1, g2)
            if not np.isfinite(loss.data):
                raise NonFiniteLoss(epoch=epoch, batch=bi)
            tape.backward(loss)
            adam_step(model.parameters(), adam, config.learning_rate,
                      config.weight_decay)
            batch_losses.append(float(loss.data))

        val_loss = _validation_loss(model, val_visits, val_mask, val_bins,
                                    val_events)
        trained.history.append(HistoryRow(
            epoch=epoch, train_loss=float(np.mean(batch_losses)),
            val_loss=val_loss, gamma1=g1, gamma2=g2))
        if val_loss < best_val:
            best_val = val_loss
            best_weights = _snapshot(model)
            epochs_without_improvement = 0
        else:
            epochs_without_improvement += 1
            if epochs_without_improvement >= config.patience:
                break

    _restore(model, best_weights)
    return trained


# ---------------------------------------------------------------------------
# Cross-validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AggregateRow:
    event: int
    quantile: float
    c_td_mean: float
    c_td_std: float
    brier_mean: float
    brier_std: float


@dataclass
class CVResult:
    fold_reports: list[MetricReport]

    def aggregate(self) -> list[AggregateRow]:
        keys = [(r.event, r.quantile) for r in self.fold_reports[0].rows]
        rows = []
        for event, quantile in keys:
            ctds = np.array([rep.lookup(event, quantile).c_td
                             for rep in self.fold_reports])
            briers = np.array([rep.lookup(event, quantile).brier
                               for rep in self.fold_reports])
            rows.append(AggregateRow(
                event=event, quantile=quantile,
                c_td_mean=float(ctds.mean()), c_td_std=float(ctds.std()),
                brier_mean=float(briers.mean()),
                brier_std=float(briers.std())))
        return rows

    def aggregate_csv(self) -> str:
        out = io.StringIO()
        out.write("event,quantile,c_td_mean,c_td_std,brier_mean,brier_std\n")
        for r in self.aggregate():
            out.write(f"{r.event},{r.quantile:g},{r.c_td_mean:.10g},"
                      f"{r.c_td_std:.10g},{r.brier_mean:.10g},"
                      f"{r.brier_std:.10g}\n")
        return out.getvalue()

    def format_table(self) -> str:
        lines = ["event  quantile  c_td(mean/std)    brier(mean/std)"]
        for r in self.aggregate():
            lines.append(
                f"{r.event:>5}  {r.quantile:>8g}  "
                f"{r.c_td_mean:.4f} ({r.c_td_std:.4f})  "
                f"{r.brier_mean:.4f} ({r.brier_std:.4f})")
        return "\n".join(lines)

    def mean_c_td(self, quantile: float, event: int = 1) -> float:
        for r in self.aggregate():
            if r.event == event and abs(r.quantile - quantile) < 1e-12:
                return r.c_td_mean
        raise KeyError((event, quantile))


def fold_assignments(n: int, folds: int, seed: int) -> list[np.ndarray]:
    """Disjoint, exhaustive patient-index folds, shuffled by seed."""
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


def _fold_worker(args):
    (config, dataset, fold_idx, holdout, quantiles, generator_config,
     synthetic, val_fraction) = args
    from . import synth as synth_mod
    from .dataset import split_dataset

    mask = np.ones(len(dataset), dtype=bool)
    mask[holdout] = False
    rest = dataset.subset(np.flatnonzero(mask))
    test = dataset.subset(holdout)
    fold_config = replace(config, seed=config.seed + fold_idx)
    inner_train, inner_val = split_dataset(rest, 1.0 - val_fraction,
                                           seed=fold_config.seed)
    if generator_config is not None:
        gen_cfg = replace(generator_config,
                          seed=generator_config.seed + fold_idx)
        synthetic_set = synth_mod.generate(inner_train, gen_cfg)
        inner_train = synth_mod.augment(inner_train, synthetic_set)
    elif synthetic is not None:
        inner_train = synth_mod.augment(inner_train, synthetic)
    trained = train(fold_config, inner_train, inner_val)
    report = evaluate_model(trained, test, quantiles)
    return report


def cross_validate(config: TrainConfig, dataset: SurvivalDataset,
                   folds: int = 5, seed: int = 0,
                   quantiles=(0.25, 0.5, 0.75),
                   generator_config=None, synthetic=None,
                   val_fraction: float = 0.2) -> CVResult:
    """Patient-level K-fold cross-validation.

    Each fold trains on the other K-1 folds (a slice of which is held out
    as the real-patient early-stopping split) and is evaluated on the
    held-out fold at the quantile horizons. Synthetic augmentation, when
    requested, touches only the training portion.
    """
    n = len(dataset)
    if folds < 2:
        raise TooFewPatients("need at least 2 folds")
    if n < folds:
        raise TooFewPatients(f"{n} patients cannot fill {folds} folds")
    assignments = fold_assignments(n, folds, seed)
    jobs = [(config, dataset, i, holdout, quantiles, generator_config,
             synthetic, val_fraction)
            for i, holdout in enumerate(assignments)]
    n_workers = _thread_budget()
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            reports = list(pool.map(_fold_worker, jobs))
    else:
        reports = [_fold_worker(job) for job in jobs]
    return CVResult(fold_reports=reports)


def _thread_budget() -> int:
    raw = os.environ.get("SURVSEQ_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# Checkpoint persistence
# ---------------------------------------------------------------------------

def save_checkpoint(trained: TrainedModel, path) -> None:
    enc_cfg = trained.model.encoder.config
    head_cfg = trained.model.head.config
    meta = dump_kv({
        "kind": "checkpoint",
        "config": parse_kv(trained.config.to_kv()),
        "encoded_width": enc_cfg.encoded_width,
        "v_max": enc_cfg.v_max,
        "n_events": head_cfg.n_events,
        "max_duration": trained.max_duration,
        "schema": schema_to_meta(trained.schema),
    })
    arrays = {"grid.boundaries": trained.grid.boundaries}
    hist = trained.history
    arrays["history"] = np.array(
        [[r.epoch, r.train_loss, r.val_loss, r.gamma1, r.gamma2]
         for r in hist]).reshape(len(hist), 5)
    for p in trained.model.parameters():
        arrays[f"param.{p.name}"] = p.data
    write_container(path, CHECKPOINT_MAGIC, CHECKPOINT_FORMAT_VERSION,
                    meta, arrays)


def load_checkpoint(path) -> TrainedModel:
    _, meta_text, arrays = read_container(path, CHECKPOINT_MAGIC,
                                          (CHECKPOINT_FORMAT_VERSION,))
    meta = parse_kv(meta_text)
    config = TrainConfig.from_kv(dump_kv(meta["config"]))
    schema = schema_from_meta(meta["schema"])
    enc_cfg = EncoderConfig(
        encoded_width=int(meta["encoded_width"]),
        v_max=int(meta["v_max"]),
        d_model=config.d_model,
        n_layers=config.n_layers,
        n_heads=config.n_heads,
        d_ff=config.d_ff,
        n_out=config.n_features,
    )
    head_cfg = HeadConfig(
        n_features=config.n_features,
        n_events=int(meta["n_events"]),
        n_bins=config.n_bins,
        depth=config.head_depth,
        d_hidden=config.d_ff,
    )
    model = SurvivalModel.initialize(enc_cfg, head_cfg, config.seed)
    for p in model.parameters():
        p.data = arrays[f"param.{p.name}"].copy()
    grid = TimeGrid(boundaries=arrays["grid.boundaries"])
    history = [HistoryRow(epoch=int(row[0]), train_loss=row[1],
                          val_loss=row[2], gamma1=row[3], gamma2=row[4])
               for row in arrays["history"]]
    return TrainedModel(model=model, schema=schema, grid=grid,
                        config=config, history=history,
                        max_duration=float(meta["max_duration"]))
