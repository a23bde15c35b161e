"""Reverse-mode automatic differentiation over a dynamic operation record.

Every operation that sees a grad-requiring input appends itself to the
record by linking the output tensor to its parents together with a rule
that maps the output gradient to parent gradients.  ``backward`` replays
the record once in reverse topological order, accumulating additively.

Arrays are float64 by default so finite-difference tolerances in the
verification suite are meaningful; call ``set_default_dtype(np.float32)``
for speed when verification is not the point.
"""

from __future__ import annotations

import math

import numpy as np

from .exceptions import ShapeError

_DEFAULT_DTYPE = np.float64


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    if dtype not in (np.float32, np.float64):
        raise ShapeError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype


def get_default_dtype():
    return _DEFAULT_DTYPE


class Tensor:
    """N-dimensional array node in the operation record."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_rule")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward_rule = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # operator sugar; every op lives as a module-level function below
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis, keepdims)


class Parameter(Tensor):
    """Trainable leaf tensor with a dotted-path name inside a model."""

    __slots__ = ("name",)

    _anon_count = 0

    def __init__(self, data, name: str | None = None):
        super().__init__(data, requires_grad=True)
        if name is None:
            Parameter._anon_count += 1
            name = f"param_{Parameter._anon_count}"
        self.name = name


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, rule) -> Tensor:
    """Record an op result; the rule maps the output grad to parent grads."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_rule = rule
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    squeeze = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if squeeze:
        grad = grad.sum(axis=squeeze, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise primitives

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    return _node(a.data**p, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)
    return _node(out_data, (a,), lambda g: (g * out_data,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.sqrt(a.data)
    return _node(out_data, (a,), lambda g: (g * 0.5 / out_data,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.tanh(a.data)
    return _node(out_data, (a,), lambda g: (g * (1.0 - out_data * out_data),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out_data = 1.0 / (1.0 + np.exp(-a.data))
    return _node(out_data, (a,), lambda g: (g * out_data * (1.0 - out_data),))


# ---------------------------------------------------------------------------
# shape and reduction primitives

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul mismatch {a.shape} @ {b.shape}")

    def rule(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(np.matmul(a.data, b.data), (a, b), rule)


def tensor_sum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)

    def rule(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_exp, a.shape).copy(),)

    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), rule)


def tensor_mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return tensor_sum(a, axis, keepdims) * (1.0 / float(count))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def take(a, idx) -> Tensor:
    """Basic (slice/int) indexing with gradient scatter-back."""
    a = as_tensor(a)

    def rule(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        full[idx] = g
        return (full,)

    return _node(a.data[idx], (a,), rule)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def rule(g):
        return tuple(
            np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(tensors))
        )

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, rule)


def pad_time(a, left: int, right: int) -> Tensor:
    """Zero-pad along axis 0 (time) of a (T, C) tensor."""
    a = as_tensor(a)
    parts = []
    if left:
        parts.append(Tensor(np.zeros((left,) + a.shape[1:])))
    parts.append(a)
    if right:
        parts.append(Tensor(np.zeros((right,) + a.shape[1:])))
    return concat(parts, axis=0) if len(parts) > 1 else a


def softmax(a, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along ``axis``; rows sum to one."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def rule(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        return (out_data * (g - inner),)

    return _node(out_data, (a,), rule)


# ---------------------------------------------------------------------------
# neural-net operations

def linear(x, weight, bias=None) -> Tensor:
    """Affine map y = x W + b with W of shape (d_in, d_out)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear mismatch: x {x.shape} vs W {weight.shape}")
    y = matmul(x, weight) if x.ndim >= 2 else matmul(reshape(x, (1, -1)), weight)
    if x.ndim < 2:
        y = reshape(y, (weight.shape[1],))
    if bias is not None:
        y = add(y, bias)
    return y


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x) -> Tensor:
    """GELU via the tanh approximation 0.5 x (1 + tanh(c (x + 0.044715 x^3)))."""
    x = as_tensor(x)
    inner = tanh(mul(add(x, mul(power(x, 3.0), 0.044715)), _GELU_C))
    return mul(mul(x, add(inner, 1.0)), 0.5)


def silu(x) -> Tensor:
    """SiLU (swish): x * sigmoid(x)."""
    x = as_tensor(x)
    return mul(x, sigmoid(x))


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit (population) variance."""
    x = as_tensor(x)
    mu = tensor_mean(x, axis=-1, keepdims=True)
    centered = sub(x, mu)
    var = tensor_mean(mul(centered, centered), axis=-1, keepdims=True)
    normed = div(centered, sqrt(add(var, eps)))
    return add(mul(normed, gamma), beta)


def dropout(x, p: float, rng: np.random.Generator | None = None, train: bool = True) -> Tensor:
    """Inverted dropout: scales kept units by 1/(1-p); identity in eval mode."""
    x = as_tensor(x)
    if not train or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ShapeError(f"dropout rate must be in [0, 1), got {p}")
    if rng is None:
        raise ShapeError("dropout in train mode needs an explicit generator")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return _node(x.data * mask, (x,), lambda g: (g * mask,))


def sinusoidal_pe(length: int, dim: int) -> np.ndarray:
    """Sinusoidal position table: PE[p, 2i] = sin(p / 10000^(2i/d)), odd = cos."""
    positions = np.arange(length, dtype=np.float64)[:, None]
    two_i = np.arange(0, dim, 2, dtype=np.float64)
    angles = positions / np.power(10000.0, two_i / dim)
    pe = np.zeros((length, dim))
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles[:, : pe[:, 1::2].shape[1]])
    return pe


def conv1d(x, kernels, bias=None, stride: int = 1) -> Tensor:
    """Valid (un-padded) strided correlation of (T, C_in) with (C_out, C_in, K).

    Output length is floor((T - K) / stride) + 1.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    if x.ndim != 2 or kernels.ndim != 3:
        raise ShapeError(f"conv1d expects (T, C_in) and (C_out, C_in, K), got {x.shape}, {kernels.shape}")
    t_in, c_in = x.shape
    c_out, kc_in, k = kernels.shape
    if kc_in != c_in:
        raise ShapeError(f"conv1d channel mismatch: input {c_in}, kernel {kc_in}")
    if t_in < k:
        raise ShapeError(f"conv1d input length {t_in} shorter than kernel {k}")
    t_out = (t_in - k) // stride + 1

    windows = np.lib.stride_tricks.sliding_window_view(x.data, k, axis=0)[::stride][:t_out]
    flat_w = kernels.data.reshape(c_out, c_in * k)
    out_data = windows.reshape(t_out, c_in * k) @ flat_w.T
    if bias is not None:
        out_data = out_data + bias.data

    parents = (x, kernels) if bias is None else (x, kernels, bias)

    def rule(g):
        gw = (g.T @ windows.reshape(t_out, c_in * k)).reshape(c_out, c_in, k)
        gx = np.zeros_like(x.data)
        per_tap = np.matmul(g, kernels.data.transpose(2, 0, 1))  # (K, T_out, C_in)
        for j in range(k):
            gx[j : j + stride * (t_out - 1) + 1 : stride] += per_tap[j]
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return _node(out_data, parents, rule)


def multi_head_self_attention(
    x,
    wq, bq, wk, bk, wv, bv, wo, bo,
    n_heads: int,
    mask: np.ndarray | None = None,
    attn_dropout: float = 0.0,
    rng: np.random.Generator | None = None,
    train: bool = False,
) -> Tensor:
    """Standard multi-head self-attention over a (T, d) sequence.

    ``mask`` is a boolean keep-mask, either (T,) over keys or a full (T, T)
    query-by-key matrix; masked scores get a large negative offset before
    the softmax.
    """
    x = as_tensor(x)
    t_len, d_model = x.shape
    if d_model % n_heads != 0:
        raise ShapeError(f"model width {d_model} not divisible by {n_heads} heads")
    d_head = d_model // n_heads

    def split_heads(m):
        return transpose(reshape(m, (t_len, n_heads, d_head)), (1, 0, 2))

    q = split_heads(linear(x, wq, bq))
    k = split_heads(linear(x, wk, bk))
    v = split_heads(linear(x, wv, bv))

    scores = mul(matmul(q, transpose(k, (0, 2, 1))), 1.0 / math.sqrt(d_head))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim == 1:
            mask = np.broadcast_to(mask[None, :], (t_len, t_len))
        offset = np.where(mask, 0.0, -1e30)
        scores = add(scores, offset[None, :, :])
    attn = softmax(scores, axis=-1)
    if attn_dropout > 0.0 and train:
        attn = dropout(attn, attn_dropout, rng, train)
    heads = matmul(attn, v)
    merged = reshape(transpose(heads, (1, 0, 2)), (t_len, d_model))
    return linear(merged, wo, bo)


# ---------------------------------------------------------------------------
# backward pass

def _topo_order(root: Tensor) -> list:
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> dict:
    """Accumulate d(loss)/d(tensor) through the record.

    Sets ``.grad`` on every reached grad-requiring tensor (replacing any
    previous value) and returns {name: gradient Tensor} for every reached
    Parameter.
    """
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise ShapeError("backward expects a scalar loss tensor")
    order = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g
        if node._backward_rule is None:
            continue
        parent_grads = node._backward_rule(g)
        for parent, pg in zip(node._parents, parent_grads):
            if not parent.requires_grad or pg is None:
                continue
            if id(parent) in grads:
                grads[id(parent)] += pg
            else:
                grads[id(parent)] = pg.astype(parent.data.dtype, copy=True)
    return {
        node.name: Tensor(node.grad)
        for node in order
        if isinstance(node, Parameter) and node.grad is not None
    }


# ---------------------------------------------------------------------------
# gradient verification

def finite_difference_gradient(fn, tensors, index: int, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar fn w.r.t. tensors[index]."""
    target = tensors[index]
    grad = np.zeros_like(target.data)
    flat = target.data.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + h
        hi = float(fn(*tensors).data)
        flat[i] = saved - h
        lo = float(fn(*tensors).data)
        flat[i] = saved
        gflat[i] = (hi - lo) / (2.0 * h)
    return grad


def check_gradients(fn, tensors, h: float = 1e-5) -> float:
    """Max relative error between recorded and finite-difference gradients.

    Relative error is measured as ||ad - fd||_inf / (1 + ||fd||_inf), taken
    over every grad-requiring input of ``fn``.
    """
    loss = fn(*tensors)
    backward(loss)
    worst = 0.0
    for i, t in enumerate(tensors):
        if not t.requires_grad:
            continue
        fd = finite_difference_gradient(fn, tensors, i, h)
        ad = t.grad if t.grad is not None else np.zeros_like(fd)
        err = np.abs(ad - fd).max() / (1.0 + np.abs(fd).max())
        worst = max(worst, float(err))
    return worst
