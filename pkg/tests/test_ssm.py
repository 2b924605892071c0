"""Selective-scan autograd op, mask validation, and the gated SSM block."""

import numpy as np
import pytest

from hybenc import tensor as T
from hybenc.errors import ConfigError, InvalidMaskError, MaskLayoutError
from hybenc.ssm import (
    MambaBlockParams,
    ScanCoefficients,
    mamba_block_forward,
    selective_scan,
    split_in_gate,
    token_coefficients,
    validate_end_padding,
)
from hybenc.nn import keyed_rng
from hybenc.tensor import Tensor


def rand(shape, seed=0, dtype=np.float64):
    return np.random.default_rng(seed).standard_normal(shape).astype(dtype)


def make_coeffs(seed, B, Tlen, Dm, N, grad=True):
    rng = np.random.default_rng(seed)
    return ScanCoefficients(
        delta=Tensor(np.log1p(np.exp(rng.standard_normal((B, Tlen, Dm)))), requires_grad=grad),
        b=Tensor(rng.standard_normal((B, Tlen, N)), requires_grad=grad),
        c=Tensor(rng.standard_normal((B, Tlen, N)), requires_grad=grad),
    )


class TestMaskValidation:
    def test_accepts_prefix_masks(self):
        validate_end_padding(np.array([[1, 1, 0, 0], [1, 1, 1, 1]]))

    def test_rejects_interior_holes(self):
        with pytest.raises(MaskLayoutError):
            validate_end_padding(np.array([[1, 0, 1, 0]]))

    def test_rejects_nonbinary(self):
        with pytest.raises(MaskLayoutError):
            validate_end_padding(np.array([[1.0, 0.5, 0.0]]))

    def test_rejects_all_pad_row(self):
        with pytest.raises(InvalidMaskError):
            validate_end_padding(np.array([[1, 1], [0, 0]]))


class TestScanOp:
    def test_gradcheck_through_op(self):
        u = Tensor(rand((2, 4, 3), 1), requires_grad=True)
        coeffs = make_coeffs(2, 2, 4, 3, 2)
        A_log = Tensor(rand((3, 2), 3) * 0.3, requires_grad=True)
        d_skip = Tensor(rand(3, 4), requires_grad=True)
        params = {"u": u, "delta": coeffs.delta, "b": coeffs.b, "c": coeffs.c,
                  "A_log": A_log, "d_skip": d_skip}

        def build():
            out = selective_scan(u, coeffs, A_log, d_skip)
            return T.tensor_sum(T.mul(out, Tensor(np.cos(np.arange(out.data.size)).reshape(out.shape))))

        loss = build()
        T.gradients(loss, params)
        err = T.finite_diff_check(build, params, h=1e-6)
        assert err < 1e-6

    def test_negative_delta_rejected(self):
        u = Tensor(rand((1, 2, 2), 5))
        coeffs = make_coeffs(6, 1, 2, 2, 2, grad=False)
        coeffs.delta.data[0, 0, 0] = -0.1
        with pytest.raises(ConfigError):
            selective_scan(u, coeffs, Tensor(np.zeros((2, 2))), Tensor(np.zeros(2)))

    def test_zero_delta_needs_flag(self):
        u = Tensor(rand((1, 2, 2), 7))
        coeffs = make_coeffs(8, 1, 2, 2, 2, grad=False)
        coeffs.delta.data[0, 1, :] = 0.0
        A_log, d_skip = Tensor(np.zeros((2, 2))), Tensor(np.zeros(2))
        with pytest.raises(ConfigError):
            selective_scan(u, coeffs, A_log, d_skip)
        selective_scan(u, coeffs, A_log, d_skip, allow_zero_delta=True)

    def test_t_equals_one(self):
        u = Tensor(rand((2, 1, 3), 9))
        coeffs = make_coeffs(10, 2, 1, 3, 2, grad=False)
        out = selective_scan(u, coeffs, Tensor(np.zeros((3, 2))), Tensor(np.ones(3)))
        # h1 = delta*b*u; y1 = sum_n c*h1 + u
        d, b, c = coeffs.delta.data, coeffs.b.data, coeffs.c.data
        ref = (c[:, :, None, :] * (d[..., None] * b[:, :, None, :] * u.data[..., None])).sum(-1) + u.data
        assert np.allclose(out.data, ref, atol=1e-12)


class TestCoefficients:
    def test_split_in_gate_halves(self):
        W = Tensor(rand((4, 12), 11))
        u, z = split_in_gate(Tensor(rand((2, 3, 4), 12)), W)
        assert u.shape == (2, 3, 6) and z.shape == (2, 3, 6)

    def test_split_dim_mismatch(self):
        with pytest.raises(ConfigError):
            split_in_gate(Tensor(rand((2, 3, 5), 13)), Tensor(rand((4, 12), 14)))

    def test_token_coefficients_shapes_and_positivity(self):
        Dm, r, N = 6, 2, 3
        co = token_coefficients(Tensor(rand((2, 5, Dm), 15)), Tensor(rand((Dm, r + 2 * N), 16)),
                                Tensor(rand((r, Dm), 17)), Tensor(np.zeros(Dm)))
        assert co.delta.shape == (2, 5, Dm)
        assert co.b.shape == (2, 5, N) and co.c.shape == (2, 5, N)
        assert np.all(co.delta.data > 0)


class TestMambaBlock:
    def make(self, D=8, seed=0, dtype=np.float64):
        rng = keyed_rng(seed, "test_block")
        # trained-magnitude weights: keeps cross-token influence visible in f64
        return MambaBlockParams(rng, D, 2 * D, N=4, r=2, k=3, D_ff=16, dtype=dtype, std=0.3)

    def test_forward_shape_and_grad(self):
        params = self.make()
        H = Tensor(rand((2, 5, 8), 20), requires_grad=True)
        m = np.array([[1, 1, 1, 1, 0], [1, 1, 1, 1, 1]])
        out = mamba_block_forward(H, m, params)
        assert out.shape == H.shape
        named = {"H": H, **params.named_parameters("blk")}
        loss = T.tensor_sum(T.mul(out, Tensor(rand(out.shape, 21))))
        grads = T.gradients(loss, named)
        assert all(np.all(np.isfinite(g.data)) for g in grads.values())

    def test_post_mask_zeroes_pads(self):
        params = self.make(seed=1)
        H = Tensor(rand((1, 6, 8), 22))
        m = np.array([[1, 1, 1, 0, 0, 0]])
        out = mamba_block_forward(H, m, params, psm_pre=True, psm_post=True)
        assert np.all(out.data[0, 3:, :] == 0.0)

    def test_pre_mask_blocks_pad_influence(self):
        # with the pre-mask on, padded and truncated runs agree exactly on
        # valid tokens even though the reverse scan passes over the pads
        params = self.make(seed=2)
        X = rand((1, 4, 8), 23)
        Xp = np.concatenate([X, rand((1, 3, 8), 24)], axis=1)
        out_short = mamba_block_forward(Tensor(X), np.ones((1, 4)), params)
        out_pad = mamba_block_forward(Tensor(Xp), np.array([[1, 1, 1, 1, 0, 0, 0]]), params)
        assert np.array_equal(out_pad.data[:, :4], out_short.data)

    def test_no_pre_mask_lets_pads_leak(self):
        params = self.make(seed=3)
        X = rand((1, 4, 8), 25)
        Xp = np.concatenate([X, rand((1, 3, 8), 26)], axis=1)
        out_short = mamba_block_forward(Tensor(X), np.ones((1, 4)), params,
                                        psm_pre=False, psm_post=False)
        out_pad = mamba_block_forward(Tensor(Xp), np.array([[1, 1, 1, 1, 0, 0, 0]]), params,
                                      psm_pre=False, psm_post=False)
        assert not np.array_equal(out_pad.data[:, :4], out_short.data)

    def test_unidirectional_scan_is_causal(self):
        # without the reverse pass, changing future inputs cannot move
        # earlier outputs (causal conv + left-to-right scan)
        params = self.make(seed=4)
        X = rand((1, 6, 8), 27)
        Y = X.copy()
        Y[:, 4:, :] += 1.0
        m = np.ones((1, 6))
        a = mamba_block_forward(Tensor(X), m, params, bidirectional=False)
        b = mamba_block_forward(Tensor(Y), m, params, bidirectional=False)
        assert np.array_equal(a.data[:, :4], b.data[:, :4])

    def test_bidirectional_sees_the_future(self):
        params = self.make(seed=5)
        X = rand((1, 6, 8), 28)
        Y = X.copy()
        Y[:, 4:, :] += 1.0
        m = np.ones((1, 6))
        a = mamba_block_forward(Tensor(X), m, params, bidirectional=True)
        b = mamba_block_forward(Tensor(Y), m, params, bidirectional=True)
        assert not np.array_equal(a.data[:, :4], b.data[:, :4])

    def test_activation_toggle_changes_output(self):
        params = self.make(seed=6)
        H = Tensor(rand((1, 4, 8), 29))
        m = np.ones((1, 4))
        a = mamba_block_forward(H, m, params, ssm_activation=True)
        b = mamba_block_forward(H, m, params, ssm_activation=False)
        assert not np.allclose(a.data, b.data)
