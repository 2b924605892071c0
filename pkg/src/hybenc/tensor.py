"""Dense tensors with reverse-mode automatic differentiation.

Everything in the encoder is built from the ops in this module. Tensors
wrap a row-major numpy buffer; ops record a backward closure so that
``backward(loss)`` can accumulate gradients in reverse topological order.
A central finite-difference oracle (``finite_diff_check``) verifies the
whole machinery end to end.
"""

from __future__ import annotations

import os
import weakref
from contextlib import contextmanager

import numpy as np

from .errors import InvalidMaskError, OracleError, ShapeError

# Large additive constant used to knock masked logits out of a softmax.
# exp(x - KAPPA) underflows to exactly 0.0 in both precisions, so masked
# positions receive weight 0 and padded/truncated runs stay bit-identical.
KAPPA_F32 = 1e9
KAPPA_F64 = 1e30

_DEBUG = os.environ.get("HYBENC_DEBUG", "") not in ("", "0")

_grad_enabled = True

# Live-buffer accounting; the diagnostics module reads the high-water mark
# as a working-set estimate.
_bytes_live = 0
_bytes_peak = 0


def _track_alloc(tensor: "Tensor") -> None:
    global _bytes_live, _bytes_peak
    n = tensor.data.nbytes
    _bytes_live += n
    if _bytes_live > _bytes_peak:
        _bytes_peak = _bytes_live

    def _release(nbytes=n):
        global _bytes_live
        _bytes_live -= nbytes

    weakref.finalize(tensor, _release)


def reset_peak_bytes() -> None:
    global _bytes_peak
    _bytes_peak = _bytes_live


def peak_bytes() -> int:
    return _bytes_peak


@contextmanager
def no_grad():
    """Disable graph construction inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


def kappa_for(dtype) -> float:
    return KAPPA_F64 if np.dtype(dtype) == np.float64 else KAPPA_F32


class Tensor:
    """A dense array plus optional gradient bookkeeping.

    Tensors are treated as immutable values: ops return new tensors and
    never write into an input buffer, so sharing across threads is safe.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64) and np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad and _grad_enabled
        self.grad = None
        self._parents = ()
        self._backward_fn = None
        _track_alloc(self)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.item())

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # Operator sugar; the functional forms below do the work.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _check_finite(arr: np.ndarray, op: str) -> None:
    if _DEBUG and not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values produced by {op}")


def _make(data: np.ndarray, parents, backward_fn, op: str = "") -> Tensor:
    _check_finite(data, op)
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_check(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not broadcast-compatible")


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    _broadcast_check(a, b, "add")
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    _broadcast_check(a, b, "sub")
    data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    _broadcast_check(a, b, "mul")
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), backward, "mul")


def scale(a: Tensor, s: float) -> Tensor:
    data = a.data * s

    def backward(g):
        a._accumulate(g * s)

    return _make(data, (a,), backward, "scale")


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def backward(g):
        a._accumulate(g * data)

    return _make(data, (a,), backward, "exp")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    data = data.astype(x.dtype)

    def backward(g):
        a._accumulate(g * data * (1.0 - data))

    return _make(data, (a,), backward, "sigmoid")


def silu(a: Tensor) -> Tensor:
    x = a.data
    s = _sigmoid_np(x)
    data = x * s

    def backward(g):
        a._accumulate(g * (s * (1.0 + x * (1.0 - s))))

    return _make(data, (a,), backward, "silu")


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    e = np.exp(-ax)
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)


def softplus(a: Tensor) -> Tensor:
    # Stable form: max(x, 0) + log1p(exp(-|x|)) avoids overflow for large x.
    x = a.data
    data = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))

    def backward(g):
        a._accumulate(g * _sigmoid_np(x))

    return _make(data, (a,), backward, "softplus")


_GELU_C = 0.7978845608028654  # sqrt(2/pi)


def gelu(a: Tensor) -> Tensor:
    # tanh approximation, the BERT-family convention.
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    data = 0.5 * x * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        da = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * dinner
        a._accumulate(g * da)

    return _make(data, (a,), backward, "gelu")


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1.0 - data**2))

    return _make(data, (a,), backward, "tanh")


# ---------------------------------------------------------------------------
# structural ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul requires >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner extents differ, {a.shape} x {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch dims of {a.shape} and {b.shape} are not broadcastable")
    data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            ga = np.matmul(g, b.data.swapaxes(-1, -2))
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(a.data.swapaxes(-1, -2), g)
            b._accumulate(_unbroadcast(gb, b.shape))

    return _make(data, (a, b), backward, "matmul")


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def backward(g):
        a._accumulate(g.reshape(a.shape))

    return _make(data, (a,), backward, "reshape")


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    data = np.ascontiguousarray(a.data.swapaxes(ax1, ax2))

    def backward(g):
        a._accumulate(g.swapaxes(ax1, ax2))

    return _make(data, (a,), backward, "swapaxes")


def flip(a: Tensor, axis: int) -> Tensor:
    data = np.flip(a.data, axis=axis).copy()

    def backward(g):
        a._accumulate(np.flip(g, axis=axis))

    return _make(data, (a,), backward, "flip")


def getitem(a: Tensor, idx) -> Tensor:
    data = a.data[idx]
    if not isinstance(data, np.ndarray):
        data = np.asarray(data)
    data = data.copy()

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a._accumulate(full)

    return _make(data, (a,), backward, "getitem")


def concat(tensors, axis: int = -1) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return _make(data, tuple(tensors), backward, "concat")


def tensor_sum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(gg, a.shape).copy())

    return _make(np.asarray(data), (a,), backward, "sum")


def tensor_mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return scale(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


# ---------------------------------------------------------------------------
# fused neural-net ops


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize the last axis to zero mean / unit (biased) variance, then affine."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = gamma.data * xhat + beta.data

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).reshape(-1, xd.shape[-1]).sum(axis=0))
        if beta.requires_grad:
            beta._accumulate(g.reshape(-1, xd.shape[-1]).sum(axis=0))
        if x.requires_grad:
            gx = g * gamma.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(inv * (gx - m1 - xhat * m2))

    return _make(data, (x, gamma, beta), backward, "layer_norm")


def _seq_sum_np(x: np.ndarray, axis: int) -> np.ndarray:
    """Left-to-right sum (via cumsum), keepdims. Unlike np.sum's pairwise
    reduction, the result is bit-identical when trailing zeros are appended
    along the axis; padding-invariance assertions rely on this."""
    out = np.cumsum(x, axis=axis)
    return np.take(out, [-1], axis=axis)


def seq_sum(a: Tensor, axis: int) -> Tensor:
    """Autograd wrapper over the left-to-right (order-stable) sum."""
    data = _seq_sum_np(a.data, axis)

    def backward(g):
        a._accumulate(np.broadcast_to(g, a.shape).astype(a.dtype, copy=False))

    return _make(data, (a,), backward, "seq_sum")


def masked_softmax(scores: Tensor, mask, kappa: float | None = None) -> Tensor:
    """Softmax along the last axis with masked positions forced to weight 0.

    ``mask`` broadcasts against ``scores``; entries are {0,1}. The mask term
    is additive (-kappa at masked slots) and a per-row max is subtracted
    before exponentiation, so valid weights are stable and masked weights
    underflow to exactly zero.
    """
    m = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    m = m.astype(scores.dtype)
    if kappa is None:
        kappa = kappa_for(scores.dtype)
    masked_rows = np.broadcast_to(m, scores.shape).max(axis=-1)
    if np.any(masked_rows <= 0):
        raise InvalidMaskError("masked_softmax: a row has no valid position")
    logits = scores.data + (1.0 - m) * (-kappa)
    logits = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    data = e / _seq_sum_np(e, axis=-1)

    def backward(g):
        dot = (g * data).sum(axis=-1, keepdims=True)
        scores._accumulate(data * (g - dot))

    return _make(data, (scores,), backward, "masked_softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    mx = xd.max(axis=axis, keepdims=True)
    shifted = xd - mx
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - lse

    def backward(g):
        soft = np.exp(data)
        x._accumulate(g - soft * g.sum(axis=axis, keepdims=True))

    return _make(data, (x,), backward, "log_softmax")


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    data = table.data[ids].copy()

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        table._accumulate(full)

    return _make(data, (table,), backward, "embedding")


# ---------------------------------------------------------------------------
# reverse-mode driver


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) into ``.grad`` for every reachable tensor."""
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise ShapeError(f"backward expects a scalar loss, got shape {loss.shape}")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)


def gradients(loss: Tensor, named_params: dict) -> dict:
    """Run backward and return a name->Tensor gradient map.

    Parameters never reached by the loss map to zero tensors of the same
    shape, so every name appears exactly once.
    """
    for p in named_params.values():
        p.zero_grad()
    backward(loss)
    out = {}
    for name, p in named_params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        out[name] = Tensor(g.copy())
    return out


def finite_diff_check(f, named_params: dict, h: float = 1e-5, return_details: bool = False):
    """Compare ``backward`` against central finite differences.

    ``f`` is a zero-argument callable returning a scalar loss built from the
    tensors in ``named_params`` (float64 recommended). Returns the maximum
    relative error |a-b| / max(|a|, |b|, 1e-8) over every parameter scalar.
    """
    loss = f()
    grads = gradients(loss, named_params)
    worst = 0.0
    details = {}
    for name, p in named_params.items():
        analytic = grads[name].data
        flat = p.data.reshape(-1)
        fd = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            with no_grad():
                fp = f().item()
            flat[i] = orig - h
            with no_grad():
                fm = f().item()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise OracleError(f"finite_diff_check: non-finite loss at parameter {name}[{i}]")
            fd[i] = (fp - fm) / (2.0 * h)
        fd = fd.reshape(p.shape)
        rel = np.abs(analytic - fd) / np.maximum.reduce([np.abs(analytic), np.abs(fd), np.full_like(fd, 1e-8)])
        err = float(rel.max()) if rel.size else 0.0
        details[name] = err
        worst = max(worst, err)
    if return_details:
        return worst, details
    return worst
