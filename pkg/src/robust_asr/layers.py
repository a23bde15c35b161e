"""Parameterized building blocks on top of the autodiff core.

Modules hold Parameters and child modules as plain attributes; parameter
names are dotted attribute paths assigned by ``bind_names``.  Weights use
fan-in scaled uniform init, biases start at zero.  Randomness (init,
dropout) always comes from an injected numpy Generator.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor


def fan_in_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Module:
    """Base class with parameter discovery over the attribute tree."""

    def named_parameters(self, prefix: str = ""):
        for attr, value in vars(self).items():
            path = f"{prefix}.{attr}" if prefix else attr
            yield from _walk(path, value)

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def bind_names(self, prefix: str = "") -> None:
        """Stamp dotted attribute paths onto every parameter."""
        for name, param in self.named_parameters(prefix):
            param.name = name

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def _walk(path, value):
    if isinstance(value, Parameter):
        yield path, value
    elif isinstance(value, Module):
        yield from value.named_parameters(path)
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(f"{path}.{i}", item)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Parameter(fan_in_uniform(rng, (d_in, d_out), d_in))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x) -> Tensor:
        return ad.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))
        self.eps = eps

    def __call__(self, x) -> Tensor:
        return ad.layer_norm(x, self.gamma, self.beta, self.eps)


class Conv1d(Module):
    def __init__(
        self,
        c_in: int,
        c_out: int,
        kernel: int,
        stride: int,
        rng: np.random.Generator,
        bias: bool = True,
    ):
        self.kernels = Parameter(fan_in_uniform(rng, (c_out, c_in, kernel), c_in * kernel))
        self.bias = Parameter(np.zeros(c_out)) if bias else None
        self.stride = stride
        self.kernel = kernel

    def __call__(self, x) -> Tensor:
        return ad.conv1d(x, self.kernels, self.bias, self.stride)

    def out_length(self, t_in: int) -> int:
        return (t_in - self.kernel) // self.stride + 1


class SameConv1d(Conv1d):
    """Stride-1 convolution that zero-pads to preserve sequence length."""

    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator):
        super().__init__(c_in, c_out, kernel, stride=1, rng=rng)

    def __call__(self, x) -> Tensor:
        left = (self.kernel - 1) // 2
        right = self.kernel - 1 - left
        return ad.conv1d(ad.pad_time(x, left, right), self.kernels, self.bias, 1)


class MultiHeadSelfAttention(Module):
    def __init__(self, dim: int, n_heads: int, rng: np.random.Generator, dropout: float = 0.0):
        self.q_proj = Linear(dim, dim, rng)
        self.k_proj = Linear(dim, dim, rng)
        self.v_proj = Linear(dim, dim, rng)
        self.out_proj = Linear(dim, dim, rng)
        self.n_heads = n_heads
        self.dropout = dropout

    def __call__(self, x, mask=None, rng=None, train: bool = False) -> Tensor:
        return ad.multi_head_self_attention(
            x,
            self.q_proj.weight, self.q_proj.bias,
            self.k_proj.weight, self.k_proj.bias,
            self.v_proj.weight, self.v_proj.bias,
            self.out_proj.weight, self.out_proj.bias,
            self.n_heads,
            mask=mask,
            attn_dropout=self.dropout,
            rng=rng,
            train=train,
        )


class FeedForward(Module):
    """Two-layer position-wise MLP with a GELU in between."""

    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.up = Linear(dim, hidden, rng)
        self.down = Linear(hidden, dim, rng)

    def __call__(self, x) -> Tensor:
        return self.down(ad.gelu(self.up(x)))


class MLP(Module):
    """Stack of Linears with GELU between layers (none after the last)."""

    def __init__(self, dims: list, rng: np.random.Generator):
        self.layers = [Linear(dims[i], dims[i + 1], rng) for i in range(len(dims) - 1)]

    def __call__(self, x) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ad.gelu(x)
        return x
