"""Temporal attention aggregator over padded visit sequences.

Visit matrices are affinely embedded, summed with a fixed sinusoidal
position table, passed through post-norm transformer encoder layers whose
attention adds -1e9 to masked key columns (so padded visits get exactly
zero weight after softmax), mean-pooled over the real visits only, and
projected through a ReLU to a fixed-size feature vector. With that masking
plus the masked pooling, the output is independent of whatever sits in the
padded rows.

All ops run on the numerics tape, so the same code path serves inference
and training. Inputs may be a single sequence (v, width) or a stacked batch
(n, v, width).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AllMasked, OddModelDim
from .numerics import (
    Parameter,
    Tensor,
    add,
    as_tensor,
    layernorm_lastdim,
    masked_mean,
    matmul,
    mul,
    relu,
    scale,
    softmax_lastdim,
    transpose_last2,
)

MASK_BIAS = -1e9


@dataclass(frozen=True)
class EncoderConfig:
    encoded_width: int
    v_max: int
    d_model: int = 16
    n_layers: int = 2
    n_heads: int = 2
    d_ff: int = 32
    n_out: int = 16

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


class AttentionHead:
    """Query/key/value projections plus this head's slice of the output map."""

    def __init__(self, wq, wk, wv, wo):
        self.wq = wq
        self.wk = wk
        self.wv = wv
        self.wo = wo

    def parameters(self):
        return [self.wq, self.wk, self.wv, self.wo]


class EncoderLayerState:
    def __init__(self, heads, attn_bias, ln1_gain, ln1_bias,
                 w1, b1, w2, b2, ln2_gain, ln2_bias):
        self.heads = heads
        self.attn_bias = attn_bias
        self.ln1_gain = ln1_gain
        self.ln1_bias = ln1_bias
        self.w1 = w1
        self.b1 = b1
        self.w2 = w2
        self.b2 = b2
        self.ln2_gain = ln2_gain
        self.ln2_bias = ln2_bias

    def parameters(self):
        params = []
        for head in self.heads:
            params.extend(head.parameters())
        params.extend([self.attn_bias, self.ln1_gain, self.ln1_bias,
                       self.w1, self.b1, self.w2, self.b2,
                       self.ln2_gain, self.ln2_bias])
        return params


class EncoderState:
    """All encoder weights plus the fixed (never trained) position table."""

    def __init__(self, config: EncoderConfig, w_emb, b_emb, layers,
                 out_w, out_b):
        self.config = config
        self.w_emb = w_emb
        self.b_emb = b_emb
        self.pos = Tensor(positional_encoding(config.v_max, config.d_model))
        self.layers = layers
        self.out_w = out_w
        self.out_b = out_b

    @classmethod
    def initialize(cls, config: EncoderConfig, rng: np.random.Generator
                   ) -> "EncoderState":
        d, dk = config.d_model, config.d_head

        def weight(name, n_in, n_out):
            bound = 1.0 / math.sqrt(n_in)
            return Parameter(rng.uniform(-bound, bound, (n_in, n_out)), name)

        def bias(name, n):
            return Parameter(np.zeros(n), name)

        w_emb = weight("emb.w", config.encoded_width, d)
        b_emb = bias("emb.b", d)
        layers = []
        for li in range(config.n_layers):
            heads = []
            for hi in range(config.n_heads):
                tag = f"layer{li}.head{hi}"
                heads.append(AttentionHead(
                    weight(f"{tag}.wq", d, dk),
                    weight(f"{tag}.wk", d, dk),
                    weight(f"{tag}.wv", d, dk),
                    weight(f"{tag}.wo", dk, d),
                ))
            layers.append(EncoderLayerState(
                heads=heads,
                attn_bias=bias(f"layer{li}.attn.b", d),
                ln1_gain=Parameter(np.ones(d), f"layer{li}.ln1.gain"),
                ln1_bias=bias(f"layer{li}.ln1.bias", d),
                w1=weight(f"layer{li}.ffn.w1", d, config.d_ff),
                b1=bias(f"layer{li}.ffn.b1", config.d_ff),
                w2=weight(f"layer{li}.ffn.w2", config.d_ff, d),
                b2=bias(f"layer{li}.ffn.b2", d),
                ln2_gain=Parameter(np.ones(d), f"layer{li}.ln2.gain"),
                ln2_bias=bias(f"layer{li}.ln2.bias", d),
            ))
        out_w = weight("out.w", d, config.n_out)
        out_b = bias("out.b", config.n_out)
        return cls(config, w_emb, b_emb, layers, out_w, out_b)

    def parameters(self):
        params = [self.w_emb, self.b_emb]
        for layer in self.layers:
            params.extend(layer.parameters())
        params.extend([self.out_w, self.out_b])
        return params


def positional_encoding(v_max: int, d_model: int) -> np.ndarray:
    """Sinusoidal table: sin on even columns, cos on odd, sharing the
    10000^(2i/d_model) wavelength per pair."""
    if d_model % 2 != 0:
        raise OddModelDim(f"d_model must be even, got {d_model}")
    positions = np.arange(v_max, dtype=np.float64)[:, None]
    i = np.arange(d_model // 2, dtype=np.float64)[None, :]
    angles = positions / np.power(10000.0, 2.0 * i / d_model)
    table = np.zeros((v_max, d_model))
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table


def _check_mask(mask: np.ndarray) -> None:
    if np.any(mask.sum(axis=-1) <= 0):
        raise AllMasked("every sequence needs at least one real visit")


def embed(visits, state: EncoderState) -> Tensor:
    """Affine embedding plus the position table (padded rows included; the
    attention mask and pooling make their content irrelevant downstream)."""
    x = as_tensor(visits)
    return add(add(matmul(x, state.w_emb), state.b_emb), state.pos)


def masked_attention(x, mask, layer: EncoderLayerState,
                     return_weights: bool = False):
    """Multi-head scaled dot-product attention with additive key masking.

    Head outputs are mapped through per-head output matrices and summed,
    which is the concat-then-project formulation with the projection stored
    in per-head slices.
    """
    x = as_tensor(x)
    mask = np.asarray(mask, dtype=np.float64)
    _check_mask(mask)
    d_head = layer.heads[0].wq.data.shape[1]
    # 0 on real visit columns, MASK_BIAS on padded ones, added pre-softmax
    key_bias = Tensor((1.0 - mask)[..., None, :] * MASK_BIAS)
    out = None
    weights = []
    for head in layer.heads:
        q = matmul(x, head.wq)
        k = matmul(x, head.wk)
        v = matmul(x, head.wv)
        scores = scale(matmul(q, transpose_last2(k)), 1.0 / math.sqrt(d_head))
        att = softmax_lastdim(add(scores, key_bias))
        if return_weights:
            weights.append(att.data.copy())
        head_out = matmul(matmul(att, v), head.wo)
        out = head_out if out is None else add(out, head_out)
    out = add(out, layer.attn_bias)
    if return_weights:
        return out, weights
    return out


def encoder_layer(x, mask, layer: EncoderLayerState) -> Tensor:
    """Post-norm block: LN(x + attention), then LN(h + FFN(h)) with a ReLU
    inner activation."""
    x = as_tensor(x)
    attended = add(x, masked_attention(x, mask, layer))
    h = add(mul(layernorm_lastdim(attended), layer.ln1_gain), layer.ln1_bias)
    ffn = add(matmul(relu(add(matmul(h, layer.w1), layer.b1)), layer.w2),
              layer.b2)
    out = add(h, ffn)
    return add(mul(layernorm_lastdim(out), layer.ln2_gain), layer.ln2_bias)


def pool_and_project(x, mask, state: EncoderState) -> Tensor:
    """Mean over real visit rows only, then affine + ReLU to n_out dims."""
    mask = np.asarray(mask, dtype=np.float64)
    _check_mask(mask)
    pooled = masked_mean(x, mask)
    return relu(add(matmul(pooled, state.out_w), state.out_b))


def encoder_forward(visits, mask, state: EncoderState) -> Tensor:
    x = embed(visits, state)
    for layer in state.layers:
        x = encoder_layer(x, mask, layer)
    return pool_and_project(x, mask, state)
