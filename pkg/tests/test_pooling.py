"""Pooling contracts: mask-aware attention pooling and its ablations."""

import numpy as np
import pytest

from hybenc.errors import ConfigError, InvalidMaskError
from hybenc.nn import keyed_rng
from hybenc.pooling import (
    HeadParams,
    MAPParams,
    MLMHeadParams,
    _attention_weights,
    classify,
    map_pool,
    mlm_logits,
    pool,
)
from hybenc.tensor import Tensor
from hybenc import tensor as T


def rand(shape, seed=0):
    return np.random.default_rng(seed).standard_normal(shape)


def setup(B=3, Tlen=6, D=8, seed=0):
    H = Tensor(rand((B, Tlen, D), seed))
    params = MAPParams(keyed_rng(seed, "map"), D, dtype=np.float64)
    return H, params


class TestMAP:
    def test_weights_sum_to_one_and_pads_zero(self):
        H, params = setup()
        m = np.array([[1, 1, 1, 0, 0, 0], [1, 1, 1, 1, 1, 0], [1, 1, 1, 1, 1, 1]])
        alpha = _attention_weights(H, m, params, masked=True).data
        assert np.allclose(alpha.sum(axis=-1), 1.0, atol=1e-12)
        assert np.all(alpha[m == 0] == 0.0)
        assert np.all(alpha[m == 1] > 0.0)

    def test_pad_rows_cannot_move_pool(self):
        H, params = setup(seed=1)
        m = np.array([[1, 1, 1, 0, 0, 0]] * 3)
        a = map_pool(H, m, params).data
        H2 = Tensor(H.data.copy())
        H2.data[:, 3:, :] += 100.0  # garbage in pad rows
        b = map_pool(H2, m, params).data
        assert np.array_equal(a, b)

    def test_equals_attn_under_full_mask(self):
        H, params = setup(seed=2)
        m = np.ones((3, 6))
        a = pool(H, m, "MAP", params).data
        b = pool(H, m, "ATTN", params).data
        assert np.array_equal(a, b), "MAP with a full mask must be bit-identical to ATTN"

    def test_all_masked_sequence_rejected(self):
        H, params = setup(seed=3)
        m = np.zeros((3, 6))
        with pytest.raises(InvalidMaskError):
            map_pool(H, m, params)

    def test_gradcheck(self):
        H, params = setup(B=2, Tlen=4, seed=4)
        H.requires_grad = True
        m = np.array([[1, 1, 1, 0], [1, 1, 1, 1]])
        named = {"H": H, "W_s": params.W_s}

        def build():
            out = map_pool(H, m, params)
            return T.tensor_sum(T.mul(out, Tensor(np.cos(np.arange(out.data.size)).reshape(out.shape))))

        assert T.finite_diff_check(build, named, h=1e-6) < 1e-6


class TestOtherModes:
    def test_cls_is_position_zero(self):
        H, params = setup(seed=5)
        out = pool(H, np.ones((3, 6)), "CLS").data
        assert np.array_equal(out, H.data[:, 0, :])

    def test_masked_mean_matches_numpy(self):
        H, _ = setup(seed=6)
        m = np.array([[1, 1, 0, 0, 0, 0], [1, 1, 1, 1, 0, 0], [1, 1, 1, 1, 1, 1]])
        out = pool(H, m, "MaskedMean").data
        for i in range(3):
            n = int(m[i].sum())
            assert np.allclose(out[i], H.data[i, :n].mean(axis=0), atol=1e-12)

    def test_masked_mean_pad_invariant(self):
        H, _ = setup(seed=7)
        m = np.array([[1, 1, 1, 0, 0, 0]] * 3)
        a = pool(H, m, "MaskedMean").data
        Hp = Tensor(np.concatenate([H.data, rand((3, 5, 8), 8)], axis=1))
        mp = np.concatenate([m, np.zeros((3, 5))], axis=1)
        b = pool(Hp, mp, "MaskedMean").data
        assert np.array_equal(a, b)

    def test_attn_reads_pad_rows(self):
        H, params = setup(seed=9)
        m = np.array([[1, 1, 1, 0, 0, 0]] * 3)
        a = pool(H, m, "ATTN", params).data
        H2 = Tensor(H.data.copy())
        H2.data[:, 3:, :] += 1.0
        b = pool(H2, m, "ATTN", params).data
        assert not np.allclose(a, b)

    def test_unknown_mode(self):
        H, params = setup(seed=10)
        with pytest.raises(ConfigError):
            pool(H, np.ones((3, 6)), "max", params)

    def test_map_requires_params(self):
        H, _ = setup(seed=11)
        with pytest.raises(ConfigError):
            pool(H, np.ones((3, 6)), "MAP", None)


class TestHeads:
    def test_classify_shapes(self):
        head = HeadParams(keyed_rng(0, "head"), 8, 3, dtype=np.float64)
        out = classify(Tensor(rand((4, 8), 12)), head)
        assert out.shape == (4, 3)

    def test_needs_two_classes(self):
        with pytest.raises(ConfigError):
            HeadParams(keyed_rng(1, "head"), 8, 1)

    def test_mlm_head_shapes(self):
        head = MLMHeadParams(keyed_rng(2, "mlm"), 8, 32, dtype=np.float64)
        out = mlm_logits(Tensor(rand((2, 5, 8), 13)), head)
        assert out.shape == (2, 5, 32)
