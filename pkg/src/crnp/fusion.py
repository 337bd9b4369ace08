"""Cross-modal uncertainty weighting, fusion functions, and attention.

The weighting rule is deliberately crossed: the map that gates modality p's
features is the summed fitting residual of every *other* modality's predictor,
so a modality gains weight exactly where its peers are unreliable. Three ways
of combining the original and gated features are supported (replace, concat,
residual -- residual is the default), optionally followed by plain single-head
scaled dot-product attention over the concatenated token sets (self mode) or
with queries from one modality against keys/values from the others (cross).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, UsageError
from .rnp import UncertaintyMap, rnp_score
from .tensor import Rng, Tensor, concat, kaiming_uniform, matmul, parameter, softmax

FUSION_FNS = ("replace", "concat", "residual")
ATTENTION_MODES = ("none", "cross", "self")


@dataclass
class FusionConfig:
    fusion_fn: str = "residual"
    attention: str = "none"
    d_k: int | None = None  # None -> token dimension
    attention_residual: bool = True
    max_tokens: int = 4096
    concat_projection: object | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.fusion_fn not in FUSION_FNS:
            raise ConfigError(f"fusion_fn must be one of {FUSION_FNS}, got {self.fusion_fn!r}")
        if self.attention not in ATTENTION_MODES:
            raise ConfigError(f"attention must be one of {ATTENTION_MODES}, got {self.attention!r}")


@dataclass
class AttentionParams:
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    d_k: int

    def parameters(self) -> list[Tensor]:
        return [self.w_q, self.w_k, self.w_v]


def init_attention(dim: int, d_k: int | None, rng: Rng,
                   value_scale: float = 0.05) -> AttentionParams:
    """Query/key projections map tokens to d_k; the value projection is square
    so attention preserves token dimension (required by the residual add).

    The value projection starts near zero: with the residual add the block
    opens as an identity and the attention pathway grows only as training
    asks for it, which keeps the block from scrambling features early on.
    """
    d_k = dim if d_k is None else d_k
    if d_k <= 0:
        raise ConfigError(f"attention dimension d_k must be positive, got {d_k}")
    w_q = parameter(kaiming_uniform(rng.child("wq"), (dim, d_k), fan_in=dim))
    w_k = parameter(kaiming_uniform(rng.child("wk"), (dim, d_k), fan_in=dim))
    w_v = parameter(value_scale * kaiming_uniform(rng.child("wv"), (dim, dim), fan_in=dim))
    return AttentionParams(w_q, w_k, w_v, d_k)


def cross_uncertainty(modalities: list[tuple], p: int) -> UncertaintyMap:
    """Raw uncertainty map for modality p: the summed residual scores of all
    other modalities. `modalities` is a list of (features, RnpModule) pairs."""
    if len(modalities) < 2:
        raise UsageError("cross-modal uncertainty needs at least 2 modalities")
    if not 0 <= p < len(modalities):
        raise UsageError(f"modality index {p} out of range for {len(modalities)} modalities")
    total = None
    for q, (x_q, m_q) in enumerate(modalities):
        if q == p:
            continue
        s = rnp_score(m_q, x_q)
        if total is None:
            total = s.copy()
        elif s.shape != total.shape:
            raise DimensionError(
                f"modality score shapes differ: {total.shape} vs {s.shape}"
            )
        else:
            total += s
    return UncertaintyMap(raw=total)


def fuse(x: Tensor, u_hat: np.ndarray, cfg: FusionConfig) -> Tensor:
    """Combine features with their uncertainty-gated form.

    replace: u*x; residual: x + u*x; concat: learned projection of
    [x, u*x] back to the original channel count.
    """
    u_hat = np.asarray(u_hat, dtype=np.float64)
    try:
        np.broadcast_shapes(x.shape, u_hat.shape)
    except ValueError:
        raise DimensionError(
            f"uncertainty map {u_hat.shape} not broadcastable over features {x.shape}"
        ) from None
    gated = x * Tensor(u_hat)
    if cfg.fusion_fn == "replace":
        return gated
    if cfg.fusion_fn == "residual":
        return x + gated
    if cfg.concat_projection is None:
        raise ConfigError("concat fusion requires a projection back to the feature width")
    return cfg.concat_projection(concat([x, gated], axis=1))


def scaled_dot_attention(queries: Tensor, keys_values: Tensor, params: AttentionParams) -> Tensor:
    """Single-head attention over token matrices (..., T, D)."""
    if queries.shape[-1] != params.w_q.shape[0] or keys_values.shape[-1] != params.w_k.shape[0]:
        raise DimensionError(
            f"token dim {queries.shape[-1]}/{keys_values.shape[-1]} does not match "
            f"projection input dim {params.w_q.shape[0]}"
        )
    q = matmul(queries, params.w_q)
    k = matmul(keys_values, params.w_k)
    v = matmul(keys_values, params.w_v)
    scores = matmul(q, k.swapaxes(-1, -2)) * (1.0 / math.sqrt(params.d_k))
    weights = softmax(scores, axis=-1)
    return matmul(weights, v)


def self_attention(x_p: Tensor, x_q: Tensor, params: AttentionParams) -> Tensor:
    """Attention where queries, keys and values are the concatenated token
    sets of both modalities; output covers all tokens in input order."""
    tokens = concat([x_p, x_q], axis=-2)
    return scaled_dot_attention(tokens, tokens, params)


def cross_attention(x_p: Tensor, x_q: Tensor, params: AttentionParams) -> Tensor:
    """Queries from modality p; keys and values from modality q."""
    return scaled_dot_attention(x_p, x_q, params)


def attention_weights(queries: Tensor, keys_values: Tensor, params: AttentionParams) -> np.ndarray:
    """The row-stochastic attention matrix, for inspection/tests."""
    q = matmul(queries, params.w_q).data
    k = matmul(keys_values, params.w_k).data
    scores = np.matmul(q, np.swapaxes(k, -1, -2)) / math.sqrt(params.d_k)
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)
