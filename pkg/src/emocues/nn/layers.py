"""Parameterised building blocks: linear maps, layer norm, attention, transformer layers."""
from __future__ import annotations

import functools
import math
from typing import Iterator

import numpy as np

from emocues.nn import tensor as T
from emocues.nn.tensor import Tensor


class Module:
    """Minimal parameter container.

    Parameters are attributes holding trainable :class:`Tensor` objects;
    submodules are attributes holding :class:`Module` instances or lists of them.
    Attribute insertion order fixes the parameter order, which the checkpoint
    format and the optimizer rely on.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ W + b`` for ``x`` of shape (n, d_in) and ``W`` of shape (d_in, d_out)."""
    if x.shape[-1] != W.shape[0]:
        raise ValueError(f"linear: input dim {x.shape[-1]} != weight rows {W.shape[0]}")
    if b is not None and b.shape != (W.shape[1],):
        raise ValueError(f"linear: bias shape {b.shape} != ({W.shape[1]},)")
    if x.ndim == 2:
        return T.affine(x, W, b)
    out = x @ W
    return out if b is None else out + b


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    return T.layer_norm(x, gamma, beta, eps)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = T.parameter(uniform_init(rng, d_in, (d_in, d_out)))
        self.bias = T.parameter(uniform_init(rng, d_in, (d_out,))) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)

    def zero_(self) -> None:
        self.weight.data[...] = 0.0
        if self.bias is not None:
            self.bias.data[...] = 0.0


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = T.parameter(np.ones(dim))
        self.beta = T.parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self.eps)


class MLP(Module):
    """Stack of linear maps with GELU between them; depth 1 is a single linear map."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, depth: int = 1):
        if depth < 1:
            raise ValueError("MLP depth must be >= 1")
        dims = [d_in] + [d_out] * depth
        self.layers = [Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]

    def forward(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            if i:
                x = T.gelu(x)
            x = layer(x)
        return x

    def zero_(self) -> None:
        for layer in self.layers:
            layer.zero_()


class MultiHeadAttention(Module):
    """Scaled dot-product attention with ``n_heads`` heads.

    The key projection carries no bias: a key bias shifts every score of a
    query by the same amount, so softmax would make its gradient identically zero.
    """

    def __init__(self, dim: int, n_heads: int, rng: np.random.Generator):
        if dim % n_heads:
            raise ValueError(f"model dim {dim} is not divisible by {n_heads} heads")
        self.dim = dim
        self.n_heads = n_heads
        self.q_proj = Linear(dim, dim, rng)
        self.k_proj = Linear(dim, dim, rng, bias=False)
        self.v_proj = Linear(dim, dim, rng)
        self.out_proj = Linear(dim, dim, rng)
        self.last_weights: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        n = x.shape[0]
        return x.reshape(n, self.n_heads, self.dim // self.n_heads).transpose(1, 0, 2)

    def forward(self, q: Tensor, k: Tensor, v: Tensor) -> Tensor:
        for name, x in (("query", q), ("key", k), ("value", v)):
            if x.ndim != 2 or x.shape[1] != self.dim:
                raise ValueError(f"attention {name} must be (n, {self.dim}), got {x.shape}")
        if k.shape[0] != v.shape[0]:
            raise ValueError("attention keys and values differ in length")
        if k.shape[0] == 0:
            raise ValueError("attention over an empty key sequence")
        n_q = q.shape[0]
        qh = self._split(self.q_proj(q))
        kh = self._split(self.k_proj(k))
        vh = self._split(self.v_proj(v))
        scale = 1.0 / math.sqrt(self.dim // self.n_heads)
        weights = T.softmax((qh @ T.swap_last(kh)) * scale, axis=-1)
        self.last_weights = weights.data
        ctx = (weights @ vh).transpose(1, 0, 2).reshape(n_q, self.dim)
        return self.out_proj(ctx)


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


class TransformerLayer(Module):
    """Pre-norm encoder layer: ``x + Attn(LN(x))`` then ``+ FFN(LN(.))``."""

    def __init__(self, dim: int, n_heads: int, rng: np.random.Generator,
                 ff_mult: int = 4, dropout: float = 0.0):
        self.ln1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, n_heads, rng)
        self.ln2 = LayerNorm(dim)
        self.ffn = FeedForward(dim, ff_mult * dim, rng)
        self.dropout = dropout

    def forward(self, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        h = self.ln1(x)
        x = x + T.dropout(self.attn(h, h, h), self.dropout, rng)
        x = x + T.dropout(self.ffn(self.ln2(x)), self.dropout, rng)
        return x

    def zero_(self) -> None:
        """Zero every projection so the layer is the identity map."""
        for lin in (self.attn.q_proj, self.attn.k_proj, self.attn.v_proj,
                    self.attn.out_proj, self.ffn.fc1, self.ffn.fc2):
            lin.zero_()


class TransformerEncoder(Module):
    def __init__(self, dim: int, n_heads: int, n_layers: int, rng: np.random.Generator,
                 ff_mult: int = 4, dropout: float = 0.0):
        self.layers = [TransformerLayer(dim, n_heads, rng, ff_mult, dropout)
                       for _ in range(n_layers)]

    def forward(self, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        for layer in self.layers:
            x = layer(x, rng)
        return x


@functools.lru_cache(maxsize=256)
def _positions(n: int, dim: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    table.setflags(write=False)
    return table


def sinusoidal_positions(n: int, dim: int) -> np.ndarray:
    """(n, dim) sine/cosine position table (read-only, cached)."""
    return _positions(n, dim)


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, params: MultiHeadAttention) -> Tensor:
    return params(q, k, v)


def transformer_layer(x: Tensor, params: TransformerLayer) -> Tensor:
    return params(x)
