"""Parameterized layers shared by both block families.

Linear / embedding / multi-head self-attention with an additive padding
mask / position-wise FFN / depthwise causal 1-d convolution, plus the
initializers and the counter-based dropout generator that keeps sampled
masks reproducible regardless of execution order.
"""

from __future__ import annotations

import hashlib

import numpy as np

from . import tensor as T
from .errors import ConfigError, VocabularyError
from .tensor import Tensor


def keyed_rng(seed: int, *parts) -> np.random.Generator:
    """Deterministic generator keyed by (seed, *parts); independent streams."""
    tag = ":".join([str(seed)] + [str(p) for p in parts])
    digest = hashlib.blake2b(tag.encode(), digest_size=16).digest()
    return np.random.Generator(np.random.Philox(key=int.from_bytes(digest, "little")))


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float32) -> np.ndarray:
    x = rng.standard_normal(shape)
    # resample outside +-2 sigma, BERT-style
    bad = np.abs(x) > 2.0
    while np.any(bad):
        x[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(x) > 2.0
    return (x * std).astype(dtype)


class DropoutCtx:
    """Forward-pass context: train flag plus the (seed, step) dropout key.

    Each dropout site passes a stable name, so the sampled mask depends only
    on (seed, step, site) and never on call order or threading.
    """

    def __init__(self, train: bool = False, seed: int = 0, step: int = 0):
        self.train = train
        self.seed = seed
        self.step = step

    def dropout(self, x: Tensor, rate: float, site: str) -> Tensor:
        if not self.train or rate <= 0.0:
            return x
        rng = keyed_rng(self.seed, "dropout", self.step, site)
        keep = (rng.random(x.shape) >= rate).astype(x.dtype.type)
        mask = Tensor(keep / np.asarray(1.0 - rate, dtype=x.dtype.type))
        return T.mul(x, mask)


EVAL_CTX = DropoutCtx(train=False)


class LayerNormParams:
    def __init__(self, dim: int, dtype=np.float32, eps: float = 1e-12):
        self.gamma = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)

    def named_parameters(self, prefix: str) -> dict:
        return {f"{prefix}.gamma": self.gamma, f"{prefix}.beta": self.beta}


class LinearParams:
    def __init__(self, rng, d_in: int, d_out: int, bias: bool = True, dtype=np.float32,
                 std: float = 0.02):
        self.W = Tensor(trunc_normal(rng, (d_in, d_out), std=std, dtype=dtype), requires_grad=True)
        self.b = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.W)
        if self.b is not None:
            y = T.add(y, self.b)
        return y

    def named_parameters(self, prefix: str) -> dict:
        out = {f"{prefix}.W": self.W}
        if self.b is not None:
            out[f"{prefix}.b"] = self.b
        return out


class FFNParams:
    """Position-wise feed-forward: down(GELU(up(x)))."""

    def __init__(self, rng, d: int, d_ff: int, dtype=np.float32, std: float = 0.02):
        if d_ff < d:
            raise ConfigError(f"D_ff ({d_ff}) must be >= D ({d})")
        self.up = LinearParams(rng, d, d_ff, dtype=dtype, std=std)
        self.down = LinearParams(rng, d_ff, d, dtype=dtype, std=std)

    def forward(self, x: Tensor) -> Tensor:
        return self.down.forward(T.gelu(self.up.forward(x)))

    def named_parameters(self, prefix: str) -> dict:
        return {**self.up.named_parameters(f"{prefix}.up"), **self.down.named_parameters(f"{prefix}.down")}


class MHSAParams:
    def __init__(self, rng, d: int, n_h: int, dtype=np.float32, std: float = 0.02):
        if d % n_h != 0:
            raise ConfigError(f"head count {n_h} must divide hidden size {d}")
        self.n_h = n_h
        self.d_h = d // n_h
        self.wq = LinearParams(rng, d, d, dtype=dtype, std=std)
        self.wk = LinearParams(rng, d, d, dtype=dtype, std=std)
        self.wv = LinearParams(rng, d, d, dtype=dtype, std=std)
        self.wo = LinearParams(rng, d, d, dtype=dtype, std=std)

    def named_parameters(self, prefix: str) -> dict:
        out = {}
        for name in ("wq", "wk", "wv", "wo"):
            out.update(getattr(self, name).named_parameters(f"{prefix}.{name}"))
        return out


def mhsa_forward(H: Tensor, m: np.ndarray, params: MHSAParams, ctx: DropoutCtx = EVAL_CTX,
                 dropout: float = 0.0, site: str = "attn") -> Tensor:
    """Scaled dot-product attention with pad keys removed from normalization."""
    B, Tlen, D = H.shape
    nh, dh = params.n_h, params.d_h

    def split_heads(x):
        return T.swapaxes(T.reshape(x, (B, Tlen, nh, dh)), 1, 2)  # (B, nh, T, dh)

    q = split_heads(params.wq.forward(H))
    k = split_heads(params.wk.forward(H))
    v = split_heads(params.wv.forward(H))
    scores = T.scale(T.matmul(q, T.swapaxes(k, -1, -2)), 1.0 / float(np.sqrt(dh)))
    key_mask = np.asarray(m).reshape(B, 1, 1, Tlen)
    attn = T.masked_softmax(scores, key_mask)
    out = T.matmul(attn, v)  # (B, nh, T, dh)
    out = T.reshape(T.swapaxes(out, 1, 2), (B, Tlen, D))
    out = params.wo.forward(out)
    return ctx.dropout(out, dropout, site)


class DWConvParams:
    """Per-channel causal 1-d convolution along the sequence axis."""

    def __init__(self, rng, channels: int, k: int, dtype=np.float32):
        if k < 1:
            raise ConfigError(f"conv kernel width must be >= 1, got {k}")
        bound = 1.0 / np.sqrt(k)
        self.kernel = Tensor(rng.uniform(-bound, bound, (channels, k)).astype(dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.k = k

    def named_parameters(self, prefix: str) -> dict:
        return {f"{prefix}.kernel": self.kernel, f"{prefix}.bias": self.bias}


def dwconv_forward(U: Tensor, params: DWConvParams) -> Tensor:
    """out[t, d] = bias[d] + sum_j kernel[d, j] * U[t - k + 1 + j, d].

    Left zero-padding makes the op causal: position t never reads past t.
    """
    B, Tlen, Dm = U.shape
    k = params.k
    if k > 1:
        pad = Tensor(np.zeros((B, k - 1, Dm), dtype=U.dtype))
        Up = T.concat([pad, U], axis=1)
    else:
        Up = U
    out = None
    for j in range(k):
        term = T.mul(Up[:, j : j + Tlen, :], params.kernel[:, j])
        out = term if out is None else T.add(out, term)
    return T.add(out, params.bias)


class EmbeddingParams:
    """Token + learned absolute position tables, embedding LN, dropout."""

    def __init__(self, rng, V: int, D: int, T_max: int, dtype=np.float32, ln_eps: float = 1e-12,
                 std: float = 0.02):
        self.V = V
        self.tok_table = Tensor(trunc_normal(rng, (V, D), std=std, dtype=dtype), requires_grad=True)
        self.pos_table = Tensor(trunc_normal(rng, (T_max, D), std=std, dtype=dtype), requires_grad=True)
        self.ln = LayerNormParams(D, dtype=dtype, eps=ln_eps)

    def named_parameters(self, prefix: str) -> dict:
        return {
            f"{prefix}.tok_table": self.tok_table,
            f"{prefix}.pos_table": self.pos_table,
            **self.ln.named_parameters(f"{prefix}.ln"),
        }


def embed_forward(ids: np.ndarray, params: EmbeddingParams, positions: bool = True,
                  dropout: float = 0.0, ctx: DropoutCtx = EVAL_CTX) -> Tensor:
    ids = np.asarray(ids)
    if ids.max(initial=0) >= params.V or ids.min(initial=0) < 0:
        raise VocabularyError(f"token id out of range [0, {params.V})")
    Tlen = ids.shape[-1]
    if positions and Tlen > params.pos_table.shape[0]:
        raise ConfigError(f"sequence length {Tlen} exceeds position table ({params.pos_table.shape[0]})")
    x = T.embedding(params.tok_table, ids)
    if positions:
        x = T.add(x, params.pos_table[:Tlen, :])
    x = params.ln.forward(x)
    return ctx.dropout(x, dropout, "embed")
