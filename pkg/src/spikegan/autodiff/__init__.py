"""Minimal reverse-mode autodiff engine used by the GAN networks."""

from .checkpoint import load_tensors, save_tensors
from .functional import (
    RunningStats,
    batch_norm,
    conv2d_transpose,
    cross_entropy,
    dropout,
    layer_norm,
    log_softmax,
    scaled_dot_product_attention,
    softmax,
    softmax_cross_entropy,
)
from .module import Module
from .tensor import (
    Tape,
    Tensor,
    add,
    as_tensor,
    clip,
    concatenate,
    div,
    exp,
    global_average_pool,
    leaky_relu,
    log,
    logsumexp,
    matmul,
    mul,
    reduce_mean,
    reduce_sum,
    reshape,
    roll,
    sigmoid,
    slice_,
    sub,
    tanh,
    transpose,
)

__all__ = [
    "Module", "RunningStats", "Tape", "Tensor", "add", "as_tensor", "batch_norm", "clip",
    "concatenate", "conv2d_transpose", "cross_entropy", "div", "dropout", "exp",
    "global_average_pool", "layer_norm", "leaky_relu", "load_tensors", "log", "log_softmax",
    "logsumexp", "matmul", "mul", "reduce_mean", "reduce_sum", "reshape", "roll", "save_tensors",
    "scaled_dot_product_attention",
    "sigmoid", "slice_", "softmax", "softmax_cross_entropy", "sub", "tanh", "transpose",
]
