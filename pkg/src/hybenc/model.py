"""Whole-model containers: encoder + MLM head, encoder + pooling + classifier."""

from __future__ import annotations

import numpy as np

from .encoder import EncoderConfig, EncoderParams, encoder_forward
from .nn import EVAL_CTX, DropoutCtx, keyed_rng
from .pooling import HeadParams, MAPParams, MLMHeadParams, classify, mlm_logits, pool
from .tensor import Tensor


class MLMModel:
    """Encoder with a masked-language-modeling head."""

    def __init__(self, config: EncoderConfig, seed: int = 0):
        self.config = config
        self.encoder = EncoderParams(config, seed=seed)
        head_rng = keyed_rng(seed, "mlm_head")
        self.head = MLMHeadParams(head_rng, config.D, config.V, dtype=config.np_dtype, ln_eps=config.ln_eps)

    def named_parameters(self) -> dict:
        out = self.encoder.named_parameters()
        out.update(self.head.named_parameters("mlm_head"))
        return out

    def encode(self, ids, m, ctx: DropoutCtx = EVAL_CTX, psm_mode: str | None = None) -> Tensor:
        return encoder_forward(ids, m, self.encoder, ctx, psm_mode=psm_mode)

    def forward(self, ids, m, ctx: DropoutCtx = EVAL_CTX, psm_mode: str | None = None) -> Tensor:
        return mlm_logits(self.encode(ids, m, ctx, psm_mode), self.head)


class ClassifierModel:
    """Encoder with pooling and a classification head."""

    def __init__(self, config: EncoderConfig, n_classes: int = 2, seed: int = 0,
                 pooling: str = "MAP"):
        self.config = config
        self.pooling = pooling
        self.encoder = EncoderParams(config, seed=seed)
        rng = keyed_rng(seed, "cls_head")
        self.map_params = MAPParams(rng, config.D, dtype=config.np_dtype)
        self.head = HeadParams(rng, config.D, n_classes, dropout=config.dropout, dtype=config.np_dtype)

    def named_parameters(self) -> dict:
        out = self.encoder.named_parameters()
        out.update(self.map_params.named_parameters("pooler"))
        out.update(self.head.named_parameters("cls_head"))
        return out

    def encode(self, ids, m, ctx: DropoutCtx = EVAL_CTX, psm_mode: str | None = None) -> Tensor:
        return encoder_forward(ids, m, self.encoder, ctx, psm_mode=psm_mode)

    def pool(self, H: Tensor, m, mode: str | None = None) -> Tensor:
        return pool(H, m, mode or self.pooling, self.map_params)

    def forward(self, ids, m, ctx: DropoutCtx = EVAL_CTX, psm_mode: str | None = None) -> Tensor:
        h = self.pool(self.encode(ids, m, ctx, psm_mode), m)
        return classify(h, self.head, ctx)


def load_state(model, arrays: dict) -> None:
    """Copy named arrays into a model's parameters (shapes must match)."""
    params = model.named_parameters()
    missing = set(params) - set(arrays)
    extra = set(arrays) - set(params)
    if missing or extra:
        raise KeyError(f"state mismatch: missing={sorted(missing)[:3]} extra={sorted(extra)[:3]}")
    for name, p in params.items():
        src = arrays[name]
        if src.shape != p.data.shape:
            raise ValueError(f"shape mismatch for {name}: {src.shape} vs {p.data.shape}")
        p.data = src.astype(p.data.dtype, copy=True)


def state_arrays(model) -> dict:
    return {name: np.array(p.data, copy=True) for name, p in model.named_parameters().items()}
