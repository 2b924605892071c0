"""Interleaved encoder: a pattern string over {M, T} selects the block
family per depth, with unified pre-LN residual wiring and a final LN.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, PatternError
from .nn import (
    EVAL_CTX,
    DropoutCtx,
    EmbeddingParams,
    FFNParams,
    LayerNormParams,
    MHSAParams,
    embed_forward,
    keyed_rng,
    mhsa_forward,
)
from .ssm import MambaBlockParams, mamba_block_forward, validate_end_padding
from .tensor import Tensor

PSM_MODES = ("none", "pre", "post", "pre+post")


def parse_pattern(s: str) -> str:
    if not s:
        raise PatternError("layer pattern must be nonempty")
    for i, ch in enumerate(s):
        if ch not in ("M", "T"):
            raise PatternError(f"invalid layer code {ch!r} at index {i} (alphabet is {{M, T}})")
    return s


@dataclass
class EncoderConfig:
    D: int = 64
    depth: int = 12
    pattern: str = "MMTMMTMMTMMT"
    n_h: int = 4
    D_ff: int = 256
    expand: int = 2
    N: int = 16
    r: int | None = None  # default: max(1, ceil(D_m / 16))
    k: int = 4
    V: int = 1024
    T_max: int = 512
    dropout: float = 0.1
    positions: bool = True
    psm_mode: str = "pre+post"
    dtype: str = "float32"
    bidirectional: bool = True
    ssm_activation: bool = True
    ln_eps: float = 1e-12
    # weight std for all projection/table initializers; 0.02 is the training
    # default, larger values emulate trained-magnitude weights in probes
    init_std: float = 0.02

    def __post_init__(self):
        self.validate()

    @property
    def D_m(self) -> int:
        return self.expand * self.D

    @property
    def r_eff(self) -> int:
        return self.r if self.r is not None else max(1, math.ceil(self.D_m / 16))

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    def validate(self) -> None:
        parse_pattern(self.pattern)
        if len(self.pattern) != self.depth:
            raise PatternError(f"pattern length {len(self.pattern)} != depth {self.depth}")
        if self.D < 1 or self.D % self.n_h != 0:
            raise ConfigError(f"n_h ({self.n_h}) must divide D ({self.D})")
        if self.D_ff < self.D:
            raise ConfigError(f"D_ff ({self.D_ff}) must be >= D ({self.D})")
        if self.expand < 1:
            raise ConfigError("expansion ratio must be >= 1")
        if self.psm_mode not in PSM_MODES:
            raise ConfigError(f"psm_mode must be one of {PSM_MODES}, got {self.psm_mode!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.V <= 5:
            raise ConfigError("vocabulary must be larger than the 5 reserved ids")
        if self.k < 1 or self.N < 1:
            raise ConfigError("k and N must be >= 1")
        if self.init_std <= 0:
            raise ConfigError("init_std must be positive")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, s: str) -> "EncoderConfig":
        return cls.from_dict(json.loads(s))


class TransformerLayerParams:
    def __init__(self, rng, cfg: EncoderConfig):
        dt = cfg.np_dtype
        self.ln1 = LayerNormParams(cfg.D, dtype=dt, eps=cfg.ln_eps)
        self.attn = MHSAParams(rng, cfg.D, cfg.n_h, dtype=dt, std=cfg.init_std)
        self.ln2 = LayerNormParams(cfg.D, dtype=dt, eps=cfg.ln_eps)
        self.ffn = FFNParams(rng, cfg.D, cfg.D_ff, dtype=dt, std=cfg.init_std)

    def named_parameters(self, prefix: str) -> dict:
        out = {}
        out.update(self.ln1.named_parameters(f"{prefix}.ln1"))
        out.update(self.attn.named_parameters(f"{prefix}.attn"))
        out.update(self.ln2.named_parameters(f"{prefix}.ln2"))
        out.update(self.ffn.named_parameters(f"{prefix}.ffn"))
        return out


def transformer_block_forward(H: Tensor, m: np.ndarray, params: TransformerLayerParams,
                              ctx: DropoutCtx = EVAL_CTX, dropout: float = 0.0,
                              site: str = "tblock") -> Tensor:
    """Pre-LN residual attention + FFN. Pad positions are left un-zeroed;
    only attention keys are masked."""
    attn = mhsa_forward(params.ln1.forward(H), m, params.attn, ctx, dropout, f"{site}.attn")
    h_att = T.add(H, attn)
    ffn_out = ctx.dropout(params.ffn.forward(params.ln2.forward(h_att)), dropout, f"{site}.ffn")
    return T.add(h_att, ffn_out)


class EncoderParams:
    """Embedding + per-layer parameter records + final LN."""

    def __init__(self, config: EncoderConfig, seed: int = 0):
        cfg = config
        dt = cfg.np_dtype
        rng = keyed_rng(seed, "init")
        self.config = cfg
        self.embedding = EmbeddingParams(rng, cfg.V, cfg.D, cfg.T_max, dtype=dt, ln_eps=cfg.ln_eps,
                                         std=cfg.init_std)
        self.layers = []
        for ch in cfg.pattern:
            if ch == "M":
                self.layers.append(MambaBlockParams(rng, cfg.D, cfg.D_m, cfg.N, cfg.r_eff,
                                                    cfg.k, cfg.D_ff, dtype=dt, ln_eps=cfg.ln_eps,
                                                    std=cfg.init_std))
            else:
                self.layers.append(TransformerLayerParams(rng, cfg))
        self.final_ln = LayerNormParams(cfg.D, dtype=dt, eps=cfg.ln_eps)

    def named_parameters(self, prefix: str = "") -> dict:
        p = prefix + "." if prefix else ""
        out = {}
        out.update(self.embedding.named_parameters(f"{p}embedding"))
        for i, layer in enumerate(self.layers):
            out.update(layer.named_parameters(f"{p}layers.{i}"))
        out.update(self.final_ln.named_parameters(f"{p}final_ln"))
        return out


def encoder_forward(ids: np.ndarray, m: np.ndarray, params: EncoderParams,
                    ctx: DropoutCtx = EVAL_CTX, psm_mode: str | None = None) -> Tensor:
    """embed -> layers in pattern order -> final LN."""
    cfg = params.config
    mode = cfg.psm_mode if psm_mode is None else psm_mode
    if mode not in PSM_MODES:
        raise ConfigError(f"psm_mode must be one of {PSM_MODES}, got {mode!r}")
    m = np.asarray(m)
    validate_end_padding(m)
    pre = mode in ("pre", "pre+post")
    post = mode in ("post", "pre+post")
    # with pre+post masking and a prefix mask, all-pad trailing columns
    # provably cannot reach valid positions; crop them before compute so the
    # arithmetic for valid tokens is literally the unpadded computation
    # (BLAS accumulation order depends on operand shape, so masking alone
    # only gives invariance up to an ulp), then zero-fill the cropped rows
    trailing = 0
    if pre and post:
        t_valid = int(m.sum(axis=1).max()) if m.size else 0
        trailing = m.shape[1] - t_valid
        if trailing > 0:
            ids, m = ids[:, :t_valid], m[:, :t_valid]
    h = embed_forward(ids, params.embedding, cfg.positions, cfg.dropout, ctx)
    for i, (ch, layer) in enumerate(zip(cfg.pattern, params.layers)):
        if ch == "M":
            h = mamba_block_forward(h, m, layer, ctx, psm_pre=pre, psm_post=post,
                                    ssm_activation=cfg.ssm_activation,
                                    bidirectional=cfg.bidirectional,
                                    dropout=cfg.dropout, site=f"layers.{i}")
        else:
            h = transformer_block_forward(h, m, layer, ctx, cfg.dropout, site=f"layers.{i}")
    h = params.final_ln.forward(h)
    if trailing > 0:
        zeros = Tensor(np.zeros((h.shape[0], trailing, h.shape[2]), dtype=h.dtype))
        h = T.concat([h, zeros], axis=1)
    return h


def count_parameters(config: EncoderConfig) -> int:
    """Closed-form parameter count of the encoder (matches the README formula)."""
    cfg = config
    D, Dff, Dm, N, r, k = cfg.D, cfg.D_ff, cfg.D_m, cfg.N, cfg.r_eff, cfg.k
    ln = 2 * D
    ffn = D * Dff + Dff + Dff * D + D
    emb = cfg.V * D + cfg.T_max * D + ln
    t_layer = 2 * ln + 4 * (D * D + D) + ffn
    m_layer = 2 * ln + D * 2 * Dm + (Dm * k + Dm) + Dm * (r + 2 * N) + r * Dm + Dm + Dm * N + Dm + Dm * D + ffn
    n_m = cfg.pattern.count("M")
    n_t = cfg.pattern.count("T")
    return emb + n_m * m_layer + n_t * t_layer + ln
