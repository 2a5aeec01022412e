"""Small reverse-mode autodiff engine and the layers built on it."""
from emocues.nn.tensor import Tensor, no_grad, parameter
from emocues.nn.layers import (
    LayerNorm, Linear, MLP, Module, MultiHeadAttention, TransformerEncoder,
    TransformerLayer, layer_norm, linear, sinusoidal_positions,
)
from emocues.nn.optim import Adam, AdamState, NonFiniteGradient, adam_step
from emocues.nn.gradcheck import grad_check

__all__ = [
    "Tensor", "no_grad", "parameter", "LayerNorm", "Linear", "MLP", "Module",
    "MultiHeadAttention", "TransformerEncoder", "TransformerLayer", "layer_norm",
    "linear", "sinusoidal_positions", "Adam", "AdamState", "NonFiniteGradient",
    "adam_step", "grad_check",
]
