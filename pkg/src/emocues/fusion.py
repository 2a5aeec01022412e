"""Two-step multi-modal fusion.

Step one lets audio frames attend over text positions (audio = query,
text = key/value).  Step two stacks fusion blocks that trade information
between the fused text-audio stream and the mel-spectrogram stream solely
through short learnable bridge sequences: one stream's transformer
processes ``stream ⊕ bridge``, the bridge outputs are projected by an MLP
and appended to the other stream before that stream's transformer.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from emocues.nn import tensor as T
from emocues.nn.layers import MLP, LayerNorm, Linear, Module, MultiHeadAttention, TransformerLayer, uniform_init
from emocues.nn.tensor import Tensor


class InitialFusion(Module):
    def __init__(self, dim: int, n_heads: int, rng: np.random.Generator):
        self.attn = MultiHeadAttention(dim, n_heads, rng)
        self.norm = LayerNorm(dim)

    def forward(self, f_t: Tensor, f_a: Tensor) -> Tensor:
        if f_t.shape[0] == 0:
            raise ValueError("initial fusion needs at least one text position")
        return self.norm(f_a + self.attn(f_a, f_t, f_t))


def initial_fusion(f_t: Tensor, f_a: Tensor, params: InitialFusion) -> Tensor:
    return params(f_t, f_a)


@dataclass
class BlockOutput:
    f_m_to_ta: Tensor   # language side, bridge positions stripped
    f_ta_to_m: Tensor   # spectral side, bridge positions stripped
    f_hat_m: Tensor
    f_hat_ta: Tensor
    bridge_hat_v: Tensor
    bridge_hat_l: Tensor
    concat_lengths: tuple[int, int]


class MfmBlock(Module):
    def __init__(self, lang_dim: int, spec_dim: int, n_heads: int, rng: np.random.Generator,
                 bridge_len: int = 4, mlp_depth: int = 1, ff_mult: int = 4, dropout: float = 0.0):
        if bridge_len < 1:
            raise ValueError("bridge length must be >= 1")
        self.bridge_len = bridge_len
        self.trans_l = TransformerLayer(lang_dim, n_heads, rng, ff_mult, dropout)
        self.trans_v = TransformerLayer(spec_dim, n_heads, rng, ff_mult, dropout)
        self.mlp_v2l = MLP(spec_dim, lang_dim, rng, mlp_depth)
        self.mlp_l2v = MLP(lang_dim, spec_dim, rng, mlp_depth)
        # bridge_v rides with the mel stream, bridge_l with the text-audio stream
        self.bridge_v = T.parameter(uniform_init(rng, spec_dim, (bridge_len, spec_dim)))
        self.bridge_l = T.parameter(uniform_init(rng, lang_dim, (bridge_len, lang_dim)))

    def forward(self, f_ta: Tensor, f_m: Tensor, rng=None) -> BlockOutput:
        n_ta, n_m = f_ta.shape[0], f_m.shape[0]
        L = self.bridge_len

        out_v = self.trans_v(T.concat([f_m, self.bridge_v]), rng)
        f_hat_m, bridge_hat_v = out_v[:n_m], out_v[n_m:]
        f_m_to_ta = self.trans_l(T.concat([f_ta, self.mlp_v2l(bridge_hat_v)]), rng)[:n_ta]

        out_l = self.trans_l(T.concat([f_ta, self.bridge_l]), rng)
        f_hat_ta, bridge_hat_l = out_l[:n_ta], out_l[n_ta:]
        f_ta_to_m = self.trans_v(T.concat([f_m, self.mlp_l2v(bridge_hat_l)]), rng)[:n_m]

        return BlockOutput(f_m_to_ta, f_ta_to_m, f_hat_m, f_hat_ta, bridge_hat_v, bridge_hat_l,
                           (n_ta + L, n_m + L))


@dataclass
class FusedFeatures:
    f_ta: Tensor
    f_m_to_ta: Tensor
    f_ta_to_m: Tensor
    blocks: list[BlockOutput]

    @property
    def f_hat_m(self) -> Tensor:
        return self.blocks[-1].f_hat_m

    @property
    def f_hat_ta(self) -> Tensor:
        return self.blocks[-1].f_hat_ta


def mfm_forward(f_ta: Tensor, f_m: Tensor, blocks: list[MfmBlock], rng=None) -> FusedFeatures:
    """Run the stacked blocks; each block's two stripped outputs feed the next."""
    if not blocks:
        raise ValueError("mfm_forward needs at least one block")
    outs = []
    x_ta, x_m = f_ta, f_m
    for block in blocks:
        out = block(x_ta, x_m, rng)
        outs.append(out)
        x_ta, x_m = out.f_m_to_ta, out.f_ta_to_m
    return FusedFeatures(f_ta, x_ta, x_m, outs)


@dataclass
class Logits:
    head_a: Tensor
    head_b: Tensor | None
    averaged: Tensor

    def predicted(self) -> int:
        return int(np.argmax(self.averaged.data))


def pool(x: Tensor) -> Tensor:
    """Mean over sequence positions, returned as a (1, d) row."""
    return x.mean(axis=0, keepdims=True)


def classify(f_m_to_ta: Tensor, f_ta_to_m: Tensor, head_a: Linear, head_b: Linear) -> Logits:
    a = head_a(pool(f_m_to_ta)).reshape(-1)
    b = head_b(pool(f_ta_to_m)).reshape(-1)
    return Logits(a, b, (a + b) * 0.5)


def classify_single(x: Tensor, head: Linear) -> Logits:
    a = head(pool(x)).reshape(-1)
    return Logits(a, None, a)
