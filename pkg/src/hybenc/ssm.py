"""The gated selective state-space block.

Pipeline per block: pre-mask -> input/gate split -> causal depthwise conv
-> SiLU -> token-wise coefficients -> selective scan -> gated readout ->
residual -> FFN -> post-mask. The scan itself runs through the compiled
kernel when available (see ``kernels``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from . import tensor as T
from .errors import ConfigError, InvalidMaskError, MaskLayoutError
from .nn import EVAL_CTX, DropoutCtx, DWConvParams, FFNParams, LayerNormParams, dwconv_forward, trunc_normal
from .tensor import Tensor


@dataclass
class ScanCoefficients:
    """Per-token scan inputs: step sizes and injection/readout vectors."""

    delta: Tensor  # (B, T, D_m), strictly positive (softplus range)
    b: Tensor  # (B, T, N)
    c: Tensor  # (B, T, N)


def validate_end_padding(m: np.ndarray) -> None:
    """Reject masks that are not a per-row prefix of ones."""
    m = np.asarray(m)
    if not np.all((m == 0) | (m == 1)):
        raise MaskLayoutError("padding mask must be binary")
    if np.any(np.diff(m.astype(np.int64), axis=-1) > 0):
        raise MaskLayoutError("padding mask must be end-padding (a prefix of ones per row)")
    if np.any(m.sum(axis=-1) < 1):
        raise InvalidMaskError("every sequence needs at least one valid token")


def split_in_gate(h_hat: Tensor, W_in: Tensor) -> tuple[Tensor, Tensor]:
    """Project D -> 2*D_m and split into the input path U and gate path Z."""
    if h_hat.shape[-1] != W_in.shape[0]:
        raise ConfigError(f"split_in_gate: input dim {h_hat.shape[-1]} != W_in rows {W_in.shape[0]}")
    d_m = W_in.shape[1] // 2
    proj = T.matmul(h_hat, W_in)
    return proj[..., :d_m], proj[..., d_m:]


def token_coefficients(u_tilde: Tensor, W_x: Tensor, W_delta: Tensor, b_delta: Tensor) -> ScanCoefficients:
    """Generate [d | b | c] per token; delta = softplus(d W_delta + b_delta)."""
    r = W_delta.shape[0]
    n = (W_x.shape[1] - r) // 2
    x = T.matmul(u_tilde, W_x)
    d = x[..., :r]
    b = x[..., r : r + n]
    c = x[..., r + n :]
    delta = T.softplus(T.add(T.matmul(d, W_delta), b_delta))
    return ScanCoefficients(delta=delta, b=b, c=c)


def selective_scan(u: Tensor, coeffs: ScanCoefficients, A_log: Tensor, d_skip: Tensor,
                   allow_zero_delta: bool = False) -> Tensor:
    """Left-to-right recurrence with decay exp(delta*A), A = -exp(A_log).

    ``allow_zero_delta`` admits exactly-zero steps (used for masked pad
    positions, where the state must stay frozen); negative steps always
    raise.
    """
    delta, b, c = coeffs.delta, coeffs.b, coeffs.c
    dd = delta.data
    if np.any(dd < 0) or (not allow_zero_delta and np.any(dd <= 0)):
        raise ConfigError("selective_scan: delta must be strictly positive")
    A = -np.exp(A_log.data)
    B_, T_, Dm = u.shape
    N = A.shape[1]
    need_grad = T.grad_enabled() and any(t.requires_grad for t in (u, delta, b, c, A_log, d_skip))
    y, h_all = kernels.scan_forward(u.data, dd, A, b.data, c.data, d_skip.data, save_states=need_grad)
    kernels.add_flops(kernels.scan_flops(B_, T_, Dm, N))

    def backward(g):
        gu, gdelta, gA, gb, gc, gds = kernels.scan_backward(
            u.data, dd, A, b.data, c.data, d_skip.data, h_all, np.ascontiguousarray(g)
        )
        if u.requires_grad:
            u._accumulate(gu)
        if delta.requires_grad:
            delta._accumulate(gdelta)
        if b.requires_grad:
            b._accumulate(gb)
        if c.requires_grad:
            c._accumulate(gc)
        if A_log.requires_grad:
            A_log._accumulate(gA * A)  # dA/dA_log = -exp(A_log) = A
        if d_skip.requires_grad:
            d_skip._accumulate(gds)

    return T._make(y, (u, delta, b, c, A_log, d_skip), backward, "selective_scan")


def gated_readout(o_tilde: Tensor, z: Tensor, W_out: Tensor) -> Tensor:
    """Y = (SiLU(Z) * O) W_out."""
    return T.matmul(T.mul(T.silu(z), o_tilde), W_out)


class MambaBlockParams:
    """All learnable arrays of one selective-SSM block."""

    def __init__(self, rng, D: int, D_m: int, N: int, r: int, k: int, D_ff: int,
                 dtype=np.float32, ln_eps: float = 1e-12, std: float = 0.02):
        if D_m % D != 0 or D_m < D:
            raise ConfigError(f"D_m ({D_m}) must be an integer multiple of D ({D})")
        self.D, self.D_m, self.N, self.r = D, D_m, N, r
        self.ln1 = LayerNormParams(D, dtype=dtype, eps=ln_eps)
        self.ln2 = LayerNormParams(D, dtype=dtype, eps=ln_eps)
        self.W_in = Tensor(trunc_normal(rng, (D, 2 * D_m), std=std, dtype=dtype), requires_grad=True)
        self.conv = DWConvParams(rng, D_m, k, dtype=dtype)
        self.W_x = Tensor(trunc_normal(rng, (D_m, r + 2 * N), std=std, dtype=dtype), requires_grad=True)
        self.W_delta = Tensor(trunc_normal(rng, (r, D_m), std=std, dtype=dtype), requires_grad=True)
        self.b_delta = Tensor(np.zeros(D_m, dtype=dtype), requires_grad=True)
        # A[d, n] = -(n + 1): stable decaying dynamics from the start
        a_init = np.tile(np.arange(1, N + 1, dtype=dtype), (D_m, 1))
        self.A_log = Tensor(np.log(a_init), requires_grad=True)
        self.D_skip = Tensor(np.ones(D_m, dtype=dtype), requires_grad=True)
        self.W_out = Tensor(trunc_normal(rng, (D_m, D), std=std, dtype=dtype), requires_grad=True)
        self.ffn = FFNParams(rng, D, D_ff, dtype=dtype, std=std)

    def named_parameters(self, prefix: str) -> dict:
        out = {}
        out.update(self.ln1.named_parameters(f"{prefix}.ln1"))
        ssm = f"{prefix}.ssm"
        out[f"{ssm}.W_in"] = self.W_in
        out.update(self.conv.named_parameters(f"{ssm}.conv"))
        out[f"{ssm}.W_x"] = self.W_x
        out[f"{ssm}.W_delta"] = self.W_delta
        out[f"{ssm}.b_delta"] = self.b_delta
        out[f"{ssm}.A_log"] = self.A_log
        out[f"{ssm}.D_skip"] = self.D_skip
        out[f"{ssm}.W_out"] = self.W_out
        out.update(self.ln2.named_parameters(f"{prefix}.ln2"))
        out.update(self.ffn.named_parameters(f"{prefix}.ffn"))
        return out


def _ssm_core(h_hat: Tensor, m_col: Tensor | None, params: MambaBlockParams,
              ssm_activation: bool, bidirectional: bool) -> Tensor:
    """split -> conv -> (SiLU) -> coefficients -> scan(s) -> gated readout."""
    u, z = split_in_gate(h_hat, params.W_in)
    u = dwconv_forward(u, params.conv)
    if ssm_activation:
        u = T.silu(u)
    if m_col is not None:
        # conv bias and SiLU re-populate pad slots; zero them so pad steps
        # leave the scan state exactly frozen
        u = T.mul(u, m_col)
    coeffs = token_coefficients(u, params.W_x, params.W_delta, params.b_delta)
    if m_col is not None:
        coeffs = ScanCoefficients(
            delta=T.mul(coeffs.delta, m_col),
            b=T.mul(coeffs.b, m_col),
            c=T.mul(coeffs.c, m_col),
        )
    o = selective_scan(u, coeffs, params.A_log, params.D_skip, allow_zero_delta=True)
    if bidirectional:
        rev = ScanCoefficients(
            delta=T.flip(coeffs.delta, 1), b=T.flip(coeffs.b, 1), c=T.flip(coeffs.c, 1)
        )
        zero_skip = Tensor(np.zeros_like(params.D_skip.data))
        o_rev = selective_scan(T.flip(u, 1), rev, params.A_log, zero_skip, allow_zero_delta=True)
        o = T.add(o, T.flip(o_rev, 1))
    return gated_readout(o, z, params.W_out)


def mamba_block_forward(H: Tensor, m: np.ndarray, params: MambaBlockParams,
                        ctx: DropoutCtx = EVAL_CTX, psm_pre: bool = True, psm_post: bool = True,
                        ssm_activation: bool = True, bidirectional: bool = True,
                        dropout: float = 0.0, site: str = "mamba") -> Tensor:
    """Pre-LN residual SSM block with two-stage padding-safe masking."""
    m = np.asarray(m)
    validate_end_padding(m)
    m_col = Tensor(m[..., None].astype(H.dtype))
    h_bar = params.ln1.forward(H)
    if psm_pre:
        h_bar = T.mul(h_bar, m_col)
    core = _ssm_core(h_bar, m_col if psm_pre else None, params, ssm_activation, bidirectional)
    h_ssm = T.add(H, core)
    ffn_out = ctx.dropout(params.ffn.forward(params.ln2.forward(h_ssm)), dropout, f"{site}.ffn")
    out = T.add(h_ssm, ffn_out)
    if psm_post:
        out = T.mul(out, m_col)
    return out
