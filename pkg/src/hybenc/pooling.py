"""Sentence-level aggregation and prediction heads.

MAP (mask-aware attention pooling) is the default: a learned token score
followed by a masked softmax so only valid tokens contribute. ATTN, CLS
and MaskedMean are the ablation variants.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigError, InvalidMaskError
from .nn import EVAL_CTX, DropoutCtx, LayerNormParams, LinearParams, trunc_normal
from .tensor import Tensor

POOLING_MODES = ("MAP", "ATTN", "CLS", "MaskedMean")


class MAPParams:
    def __init__(self, rng, D: int, dtype=np.float32):
        self.W_s = Tensor(trunc_normal(rng, (D, 1), dtype=dtype), requires_grad=True)

    def named_parameters(self, prefix: str) -> dict:
        return {f"{prefix}.W_s": self.W_s}


def _attention_weights(H: Tensor, m, params: MAPParams, masked: bool) -> Tensor:
    B, Tlen, D = H.shape
    # elementwise product + left-to-right sum instead of H @ W_s: BLAS picks
    # shape-dependent accumulation orders, which would break bit-exact
    # padding invariance of the pooled vector
    w = T.reshape(params.W_s, (1, 1, D))
    scores = T.reshape(T.seq_sum(T.mul(H, w), axis=-1), (B, Tlen))
    if masked:
        m = np.asarray(m)
        if np.any(m.sum(axis=-1) < 1):
            raise InvalidMaskError("pooling: a sequence has no valid token")
        return T.masked_softmax(scores, m)
    return T.masked_softmax(scores, np.ones((B, Tlen)))


def _weighted_sum(H: Tensor, alpha: Tensor) -> Tensor:
    """sum_t alpha_t H_t, order-stable along the token axis."""
    B, Tlen, D = H.shape
    weighted = T.mul(H, T.reshape(alpha, (B, Tlen, 1)))
    return T.reshape(T.seq_sum(weighted, axis=1), (B, D))


def map_pool(H: Tensor, m, params: MAPParams) -> Tensor:
    """h_pool = sum_t alpha_t H_t with pad weights forced to zero."""
    alpha = _attention_weights(H, m, params, masked=True)
    return _weighted_sum(H, alpha)


def pool(H: Tensor, m, mode: str, params: MAPParams | None = None) -> Tensor:
    """Pool token representations to one vector per sequence."""
    if mode not in POOLING_MODES:
        raise ConfigError(f"pooling mode must be one of {POOLING_MODES}, got {mode!r}")
    B, Tlen, D = H.shape
    if mode == "CLS":
        return H[:, 0, :]
    if mode == "MaskedMean":
        m = np.asarray(m)
        counts = m.sum(axis=-1)
        if np.any(counts < 1):
            raise InvalidMaskError("MaskedMean: a sequence has no valid token")
        mt = Tensor(m[..., None].astype(H.dtype))
        # left-to-right sum: appending pad rows cannot perturb the result
        total = T.reshape(T.seq_sum(T.mul(H, mt), axis=1), (B, D))
        return T.mul(total, Tensor((1.0 / counts)[:, None].astype(H.dtype)))
    if params is None:
        raise ConfigError(f"pooling mode {mode} needs MAPParams")
    if mode == "ATTN":
        alpha = _attention_weights(H, m, params, masked=False)
        return _weighted_sum(H, alpha)
    return map_pool(H, m, params)


class HeadParams:
    """Linear classification head over the pooled vector."""

    def __init__(self, rng, D: int, C: int, dropout: float = 0.1, dtype=np.float32):
        if C < 2:
            raise ConfigError(f"classification needs C >= 2, got {C}")
        self.W_c = Tensor(trunc_normal(rng, (C, D), dtype=dtype), requires_grad=True)
        self.b_c = Tensor(np.zeros(C, dtype=dtype), requires_grad=True)
        self.dropout = dropout

    def named_parameters(self, prefix: str) -> dict:
        return {f"{prefix}.W_c": self.W_c, f"{prefix}.b_c": self.b_c}


def classify(h_pool: Tensor, params: HeadParams, ctx: DropoutCtx = EVAL_CTX) -> Tensor:
    """logits = W_c . Dropout(h_pool) + b_c (dropout is identity in eval)."""
    h = ctx.dropout(h_pool, params.dropout, "pooled")
    return T.add(T.matmul(h, T.swapaxes(params.W_c, 0, 1)), params.b_c)


class MLMHeadParams:
    """BERT-style MLM head: transform + GELU + LN, then a decoder to V."""

    def __init__(self, rng, D: int, V: int, dtype=np.float32, ln_eps: float = 1e-12):
        self.transform = LinearParams(rng, D, D, dtype=dtype)
        self.ln = LayerNormParams(D, dtype=dtype, eps=ln_eps)
        self.decoder = LinearParams(rng, D, V, dtype=dtype)

    def named_parameters(self, prefix: str) -> dict:
        out = {}
        out.update(self.transform.named_parameters(f"{prefix}.transform"))
        out.update(self.ln.named_parameters(f"{prefix}.ln"))
        out.update(self.decoder.named_parameters(f"{prefix}.decoder"))
        return out


def mlm_logits(H: Tensor, params: MLMHeadParams) -> Tensor:
    """Position-wise logits over the vocabulary."""
    return params.decoder.forward(params.ln.forward(T.gelu(params.transform.forward(H))))
