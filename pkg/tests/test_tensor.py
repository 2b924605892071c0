"""Autograd engine: every op's analytic gradient against central differences."""

import numpy as np
import pytest

from hybenc import tensor as T
from hybenc.errors import InvalidMaskError, OracleError, ShapeError
from hybenc.tensor import Tensor


def rand(shape, seed=0):
    return np.random.default_rng(seed).standard_normal(shape)


def check_op(build, params, h=1e-6, tol=1e-7):
    """Gradcheck `build(params) -> scalar Tensor` against finite differences."""
    loss = build(params)
    grads = T.gradients(loss, params)
    max_err, details = T.finite_diff_check(lambda: build(params), params, h=h, return_details=True)
    assert max_err <= tol, f"finite-diff mismatch: {max_err:.3e} ({details})"
    return grads


def scalarize(x):
    return T.tensor_sum(T.mul(x, Tensor(np.cos(np.arange(x.data.size)).reshape(x.shape))))


class TestElementwise:
    @pytest.mark.parametrize("op", [T.exp, T.sigmoid, T.silu, T.softplus, T.gelu, T.tanh])
    def test_unary_grads(self, op):
        p = {"x": Tensor(rand((3, 4), 1), requires_grad=True)}
        check_op(lambda P: scalarize(op(P["x"])), p)

    def test_add_mul_broadcast(self):
        p = {
            "a": Tensor(rand((2, 3, 4), 2), requires_grad=True),
            "b": Tensor(rand((4,), 3), requires_grad=True),
        }
        check_op(lambda P: scalarize(T.mul(T.add(P["a"], P["b"]), P["b"])), p)

    def test_sub_scale(self):
        p = {"a": Tensor(rand((5,), 4), requires_grad=True), "b": Tensor(rand((5,), 5), requires_grad=True)}
        check_op(lambda P: scalarize(T.scale(T.sub(P["a"], P["b"]), -2.5)), p)

    def test_softplus_large_negative_stable(self):
        x = Tensor(np.array([-800.0, -50.0, 0.0, 50.0]))
        y = T.softplus(x)
        assert np.all(np.isfinite(y.data))
        assert y.data[0] == 0.0  # exp underflow, not NaN
        assert abs(y.data[3] - 50.0) < 1e-12

    def test_incompatible_shapes_raise(self):
        with pytest.raises(ShapeError):
            T.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))


class TestShapeOps:
    def test_matmul_batched(self):
        p = {
            "a": Tensor(rand((2, 3, 4), 6), requires_grad=True),
            "b": Tensor(rand((2, 4, 5), 7), requires_grad=True),
        }
        check_op(lambda P: scalarize(T.matmul(P["a"], P["b"])), p)

    def test_matmul_weight_broadcast(self):
        p = {
            "x": Tensor(rand((2, 3, 4), 8), requires_grad=True),
            "W": Tensor(rand((4, 6), 9), requires_grad=True),
        }
        check_op(lambda P: scalarize(T.matmul(P["x"], P["W"])), p)

    def test_reshape_swapaxes_flip(self):
        p = {"x": Tensor(rand((2, 3, 4), 10), requires_grad=True)}
        check_op(
            lambda P: scalarize(T.flip(T.swapaxes(T.reshape(P["x"], (2, 12)), 0, 1), 0)), p
        )

    def test_getitem_and_concat(self):
        p = {"x": Tensor(rand((3, 5), 11), requires_grad=True), "y": Tensor(rand((3, 2), 12), requires_grad=True)}
        check_op(lambda P: scalarize(T.concat([P["x"][:, 1:4], P["y"]], axis=1)), p)

    def test_sum_mean_axes(self):
        p = {"x": Tensor(rand((4, 5), 13), requires_grad=True)}
        check_op(lambda P: scalarize(T.tensor_sum(P["x"], axis=1, keepdims=True)), p)
        check_op(lambda P: scalarize(T.tensor_mean(P["x"], axis=0)), p)

    def test_seq_sum_matches_sum(self):
        x = rand((4, 7), 14)
        assert np.allclose(T.seq_sum(Tensor(x), axis=1).data[:, 0], x.sum(axis=1))
        p = {"x": Tensor(x, requires_grad=True)}
        check_op(lambda P: scalarize(T.seq_sum(P["x"], axis=1)), p)

    def test_seq_sum_trailing_zero_invariance(self):
        x = rand((6, 26), 15)
        padded = np.concatenate([x, np.zeros((6, 64))], axis=1)
        a = T.seq_sum(Tensor(x), axis=-1).data
        b = T.seq_sum(Tensor(padded), axis=-1).data
        assert np.all(a == b), "left-to-right sum must ignore appended zeros bit-exactly"


class TestNormalizers:
    def test_layer_norm_grads(self):
        p = {
            "x": Tensor(rand((2, 3, 6), 16), requires_grad=True),
            "g": Tensor(1.0 + 0.1 * rand(6, 17), requires_grad=True),
            "b": Tensor(0.1 * rand(6, 18), requires_grad=True),
        }
        check_op(lambda P: scalarize(T.layer_norm(P["x"], P["g"], P["b"])), p, tol=1e-6)

    def test_layer_norm_statistics(self):
        x = Tensor(rand((4, 8), 19))
        y = T.layer_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8)))
        assert np.allclose(y.data.mean(axis=-1), 0, atol=1e-12)
        assert np.allclose(y.data.std(axis=-1), 1, atol=1e-6)

    def test_masked_softmax_grads_and_zeros(self):
        mask = np.array([[1, 1, 1, 0, 0], [1, 1, 1, 1, 1]])
        p = {"s": Tensor(rand((2, 5), 20), requires_grad=True)}
        check_op(lambda P: scalarize(T.masked_softmax(P["s"], mask)), p)
        probs = T.masked_softmax(p["s"], mask).data
        assert np.all(probs[0, 3:] == 0.0)
        assert np.allclose(probs.sum(axis=-1), 1.0, atol=1e-12)

    def test_masked_softmax_all_masked_row_raises(self):
        with pytest.raises(InvalidMaskError):
            T.masked_softmax(Tensor(rand((2, 4), 21)), np.array([[1, 1, 1, 1], [0, 0, 0, 0]]))

    def test_masked_softmax_pad_weight_underflows_to_zero(self):
        for dt in (np.float32, np.float64):
            s = Tensor(rand((1, 6), 22).astype(dt))
            probs = T.masked_softmax(s, np.array([[1, 1, 1, 0, 0, 0]]))
            assert np.all(probs.data[0, 3:] == 0.0)

    def test_log_softmax_grads(self):
        p = {"x": Tensor(rand((3, 7), 23), requires_grad=True)}
        check_op(lambda P: scalarize(T.log_softmax(P["x"])), p)

    def test_log_softmax_uniform_value(self):
        # all-equal logits: log softmax is exactly -ln(V)
        x = Tensor(np.zeros((2, 10)))
        assert np.allclose(T.log_softmax(x).data, -np.log(10.0))


class TestEmbeddingAndDriver:
    def test_embedding_grads_with_repeats(self):
        ids = np.array([[0, 2, 2, 1], [3, 0, 0, 0]])  # repeated rows accumulate
        p = {"tab": Tensor(rand((4, 5), 24), requires_grad=True)}
        check_op(lambda P: scalarize(T.embedding(P["tab"], ids)), p)

    def test_gradients_unreached_param_zero(self):
        a = Tensor(rand((3,), 25), requires_grad=True)
        unused = Tensor(rand((3,), 26), requires_grad=True)
        g = T.gradients(T.tensor_sum(a), {"a": a, "unused": unused})
        assert np.all(g["unused"].data == 0.0)
        assert np.allclose(g["a"].data, 1.0)

    def test_no_grad_blocks_graph(self):
        a = Tensor(rand((3,), 27), requires_grad=True)
        with T.no_grad():
            out = T.exp(a)
        assert out._parents == () and out._backward_fn is None

    def test_diamond_graph_accumulates(self):
        # y = x*x + x: dy/dx = 2x + 1 through two paths
        x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
        y = T.tensor_sum(T.add(T.mul(x, x), x))
        g = T.gradients(y, {"x": x})["x"].data
        assert np.allclose(g, 2 * x.data + 1)

    def test_finite_diff_check_rejects_nonfinite(self):
        p = {"x": Tensor(np.array([1.0]), requires_grad=True)}

        def bad():
            return T.scale(T.exp(T.scale(p["x"], 1e6)), 1.0)

        with np.errstate(over="ignore"), pytest.raises(OracleError):
            T.finite_diff_check(bad, p)

    def test_peak_bytes_tracks_allocations(self):
        T.reset_peak_bytes()
        base = T.peak_bytes()
        big = Tensor(np.zeros((64, 64)))
        assert T.peak_bytes() >= base + big.data.nbytes
