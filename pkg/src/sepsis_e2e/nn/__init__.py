"""Dense network engine: layers, gradients, SGD, and seed handling."""

from ..rng import derive_seed, make_rng
from .network import (
    IDENTITY,
    RELU,
    ForwardCache,
    LayerSpec,
    Network,
    backward,
    forward,
    forward_batch,
    grad_check,
    init_network,
    sample_dropout_mask,
    sgd_step,
    softmax_cross_entropy,
    softmax_cross_entropy_batch,
)

__all__ = [
    "IDENTITY",
    "RELU",
    "ForwardCache",
    "LayerSpec",
    "Network",
    "backward",
    "derive_seed",
    "forward",
    "forward_batch",
    "grad_check",
    "init_network",
    "make_rng",
    "sample_dropout_mask",
    "sgd_step",
    "softmax_cross_entropy",
    "softmax_cross_entropy_batch",
]
