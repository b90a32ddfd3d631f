"""Cause-specific discrete-hazard heads and the composite training loss.

Each event type gets its own small MLP mapping the pooled feature vector to
per-bin hazard logits; sigmoid turns those into conditional hazards, from
which survival curves and event-time pmfs follow by the product rule. Two
auxiliary heads predict overall mortality (one logit) and normalized length
of stay (one real).

The training loss is
    L = L_IPS + gamma1 * L_MP + gamma2 * L_LS
where L_IPS is the censoring-weighted discrete-hazard negative
log-likelihood, L_MP a binary cross-entropy on any-event-by-end-of-followup
and L_LS a squared error on max-normalized duration. The tape route
expresses every log term through softplus so saturated logits stay finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .encoder import EncoderConfig, EncoderState, encoder_forward
from .numerics import (
    Parameter,
    Tensor,
    add,
    as_tensor,
    matmul,
    mul,
    relu,
    scale,
    softplus,
    square,
    sub,
    sum_all,
)

HAZARD_CLIP = 1e-15


@dataclass(frozen=True)
class HeadConfig:
    n_features: int
    n_events: int
    n_bins: int
    depth: int = 2
    d_hidden: int = 32

    def __post_init__(self):
        if self.depth not in (1, 2):
            raise ValueError("head depth must be 1 or 2")
        if self.n_events < 1 or self.n_bins < 1:
            raise ValueError("need at least one event type and one bin")


def _mlp_init(tag: str, n_in: int, n_out: int, depth: int, hidden: int,
              rng: np.random.Generator):
    """Affine layer stack with ReLU between layers; list of (w, b) pairs.

    Biases start at small nonzero values. With zero biases, a feature
    vector that the upstream ReLU zeroed out entirely would put every
    hidden pre-activation exactly on the ReLU kink, where gradients are
    ill-defined; a random offset keeps initialization off that edge.
    """
    widths = [n_in, n_out] if depth == 1 else [n_in, hidden, n_out]
    layers = []
    for i in range(len(widths) - 1):
        bound = 1.0 / math.sqrt(widths[i])
        w = Parameter(rng.uniform(-bound, bound, (widths[i], widths[i + 1])),
                      f"{tag}.l{i}.w")
        b = Parameter(rng.uniform(-bound, bound, widths[i + 1]),
                      f"{tag}.l{i}.b")
        layers.append((w, b))
    return layers


def _mlp_forward(x, layers):
    out = as_tensor(x)
    for i, (w, b) in enumerate(layers):
        out = add(matmul(out, w), b)
        if i < len(layers) - 1:
            out = relu(out)
    return out


def _mlp_forward_np(x: np.ndarray, layers) -> np.ndarray:
    out = np.asarray(x, dtype=np.float64)
    for i, (w, b) in enumerate(layers):
        out = out @ w.data + b.data
        if i < len(layers) - 1:
            out = np.maximum(out, 0.0)
    return out


class HeadState:
    """Per-event hazard MLPs plus the mortality and length-of-stay heads."""

    def __init__(self, config: HeadConfig, hazard_heads, mortality, los):
        self.config = config
        self.hazard_heads = hazard_heads
        self.mortality = mortality
        self.los = los

    @classmethod
    def initialize(cls, config: HeadConfig, rng: np.random.Generator
                   ) -> "HeadState":
        hazard_heads = [
            _mlp_init(f"event{k}", config.n_features, config.n_bins,
                      config.depth, config.d_hidden, rng)
            for k in range(1, config.n_events + 1)
        ]
        mortality = _mlp_init("mortality", config.n_features, 1,
                              config.depth, config.d_hidden, rng)
        los = _mlp_init("los", config.n_features, 1,
                        config.depth, config.d_hidden, rng)
        return cls(config, hazard_heads, mortality, los)

    def parameters(self):
        params = []
        for layers in self.hazard_heads:
            for w, b in layers:
                params.extend([w, b])
        for w, b in self.mortality + self.los:
            params.extend([w, b])
        return params


class SurvivalModel:
    """The full trainable stack: sequence encoder plus all output heads."""

    def __init__(self, encoder: EncoderState, head: HeadState):
        if encoder.config.n_out != head.config.n_features:
            raise ValueError("encoder output width must match head input")
        self.encoder = encoder
        self.head = head

    @classmethod
    def initialize(cls, enc_config: EncoderConfig, head_config: HeadConfig,
                   seed: int) -> "SurvivalModel":
        rng = np.random.default_rng(seed)
        return cls(EncoderState.initialize(enc_config, rng),
                   HeadState.initialize(head_config, rng))

    def parameters(self):
        return self.encoder.parameters() + self.head.parameters()

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()


@dataclass(frozen=True)
class HazardPrediction:
    """Per-event conditional hazards with derived survival and pmf.

    hazards: (..., K, B) in (0,1); survival: (..., K, B+1) starting at 1;
    pmf: (..., K, B) with pmf[..., b] = survival[..., b] * hazards[..., b].
    The last survival column is the probability of outliving the grid, so
    pmf.sum(-1) + survival[..., -1] = 1.
    """

    hazards: np.ndarray
    survival: np.ndarray
    pmf: np.ndarray


def _prediction_from_hazards(hazards: np.ndarray) -> HazardPrediction:
    keep = np.cumprod(1.0 - hazards, axis=-1)
    pad = np.ones(hazards.shape[:-1] + (1,))
    survival = np.concatenate([pad, keep], axis=-1)
    pmf = survival[..., :-1] * hazards
    return HazardPrediction(hazards=hazards, survival=survival, pmf=pmf)


def hazard_logits_np(features: np.ndarray, state: HeadState) -> np.ndarray:
    """Stacked per-event logits, shape (..., K, B)."""
    cols = [_mlp_forward_np(features, layers) for layers in state.hazard_heads]
    return np.stack(cols, axis=-2)


def predict(features, state: HeadState) -> HazardPrediction:
    """Hazards, survival curve, and pmf for one feature vector or a batch."""
    logits = hazard_logits_np(np.asarray(features, dtype=np.float64), state)
    hazards = np.clip(_sigmoid(logits), HAZARD_CLIP, 1.0 - HAZARD_CLIP)
    return _prediction_from_hazards(hazards)


def predict_sequences(visits, mask, model: SurvivalModel) -> HazardPrediction:
    """Visit sequences straight through encoder and hazard heads."""
    feats = encoder_forward(visits, mask, model.encoder)
    return predict(feats.data, model.head)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def pch_loss(pred: HazardPrediction, label, weight: float = 1.0) -> float:
    """Discrete-hazard negative log-likelihood for one subject.

    label is (bin_index, event). For event k > 0 the subject contributes
    the event log-hazard at its bin plus survival terms before it, weighted
    by `weight`, and full censoring terms through its bin for every other
    event type (same weight). Censored subjects contribute censoring terms
    for all event types at weight 1 regardless of `weight`.
    """
    bin_idx, event = int(label[0]), int(label[1])
    hz = np.clip(pred.hazards, HAZARD_CLIP, 1.0 - HAZARD_CLIP)
    if hz.ndim != 2:
        raise ValueError("pch_loss expects a single-subject prediction")
    n_events, n_bins = hz.shape
    if not 0 <= bin_idx < n_bins:
        raise ValueError(f"bin index {bin_idx} outside [0, {n_bins - 1}]")
    log_hz = np.log(hz)
    log_keep = np.log1p(-hz)
    if event == 0:
        return float(-np.sum(log_keep[:, :bin_idx + 1]))
    k = event - 1
    total = -(log_hz[k, bin_idx] + log_keep[k, :bin_idx].sum())
    for other in range(n_events):
        if other != k:
            total -= log_keep[other, :bin_idx + 1].sum()
    return float(weight) * float(total)


def mortality_loss(features, state: HeadState, event_indicator: int) -> float:
    """Binary cross-entropy of the mortality logit against 1[e > 0]."""
    z = float(_mlp_forward_np(np.asarray(features, dtype=np.float64),
                              state.mortality).reshape(-1)[0])
    y = 1.0 if event_indicator else 0.0
    return y * _softplus_np(-z) + (1.0 - y) * _softplus_np(z)


def length_of_stay_loss(features, state: HeadState,
                        duration_normalized: float) -> float:
    p = float(_mlp_forward_np(np.asarray(features, dtype=np.float64),
                              state.los).reshape(-1)[0])
    return (p - float(duration_normalized)) ** 2


def _softplus_np(z: float) -> float:
    return max(z, 0.0) + math.log1p(math.exp(-abs(z)))


@dataclass(frozen=True)
class TrainingBatch:
    """Everything the composite loss needs for a batch of subjects.

    bins are duration bin indices under the training grid; weights are the
    censoring-adjustment weights (1 for censored subjects); duration_norm
    is duration divided by the training-split maximum.
    """

    visits: np.ndarray
    mask: np.ndarray
    bins: np.ndarray
    events: np.ndarray
    weights: np.ndarray
    duration_norm: np.ndarray

    @property
    def n_subjects(self) -> int:
        return self.visits.shape[0]


def _pch_coefficients(batch: TrainingBatch, n_events: int, n_bins: int):
    """Constant matrices A_k, C_k such that the weighted likelihood is
    sum_k A_k * softplus(-z_k) + C_k * softplus(z_k), using
    -log(hazard) = softplus(-z) and -log(1 - hazard) = softplus(z)."""
    n = batch.n_subjects
    bins = batch.bins.astype(int)
    events = batch.events.astype(int)
    weights = batch.weights.astype(np.float64)
    cols = np.arange(n_bins)[None, :]
    event_coef = np.zeros((n_events, n, n_bins))
    keep_coef = np.zeros((n_events, n, n_bins))
    for k in range(1, n_events + 1):
        own = events == k
        ek, ck = event_coef[k - 1], keep_coef[k - 1]
        ek[own] = (cols == bins[own, None]) * weights[own, None]
        ck[own] = (cols < bins[own, None]) * weights[own, None]
        other = (events != k) & (events > 0)
        ck[other] = (cols <= bins[other, None]) * weights[other, None]
        censored = events == 0
        ck[censored] = (cols <= bins[censored, None]) * 1.0
    return event_coef, keep_coef


def combined_loss(batch: TrainingBatch, model: SurvivalModel,
                  gamma1: float, gamma2: float) -> Tensor:
    """Tape-recorded composite loss, mean over the batch."""
    n = batch.n_subjects
    cfg = model.head.config
    feats = encoder_forward(batch.visits, batch.mask, model.encoder)

    event_coef, keep_coef = _pch_coefficients(batch, cfg.n_events, cfg.n_bins)
    pch = None
    for k in range(cfg.n_events):
        z = _mlp_forward(feats, model.head.hazard_heads[k])
        term = add(mul(softplus(scale(z, -1.0)), Tensor(event_coef[k])),
                   mul(softplus(z), Tensor(keep_coef[k])))
        pch = term if pch is None else add(pch, term)
    loss = scale(sum_all(pch), 1.0 / n)

    if gamma1 != 0.0:
        z_mp = _mlp_forward(feats, model.head.mortality)
        y = (batch.events > 0).astype(np.float64)[:, None]
        bce = add(mul(softplus(scale(z_mp, -1.0)), Tensor(y)),
                  mul(softplus(z_mp), Tensor(1.0 - y)))
        loss = add(loss, scale(sum_all(bce), gamma1 / n))

    if gamma2 != 0.0:
        z_ls = _mlp_forward(feats, model.head.los)
        target = Tensor(batch.duration_norm.astype(np.float64)[:, None])
        loss = add(loss, scale(sum_all(square(sub(z_ls, target))),
                               gamma2 / n))
    return loss


def batch_pch_loss(pred: HazardPrediction, bins, events, weights) -> float:
    """Mean numpy-side loss over a batch prediction (hazards (n, K, B))."""
    n = pred.hazards.shape[0]
    total = 0.0
    for i in range(n):
        single = HazardPrediction(pred.hazards[i], pred.survival[i],
                                  pred.pmf[i])
        total += pch_loss(single, (bins[i], events[i]), weights[i])
    return total / n
