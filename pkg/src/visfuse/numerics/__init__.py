"""Float64 tensors, reverse-mode gradients, Adam and the raw tensor format."""
from .tensor import Tape, Tensor, as_tensor, backward, parameter, record, zeros_parameter
from .ops import (
    add, add_bias, concat_last_dim, concat_rows, conv1d, conv2d, film_modulate,
    hadamard, index, layer_norm, matmul, mean_all, mean_pool_tokens, permute, relu,
    reshape, scale, softmax_rows, sub, sum_all, transpose,
)
from .optim import Adam, AdamState, adam_step
from . import tensorio

__all__ = [
    "Tape", "Tensor", "as_tensor", "backward", "parameter", "record", "zeros_parameter",
    "add", "add_bias", "concat_last_dim", "concat_rows", "conv1d", "conv2d",
    "film_modulate", "hadamard", "index", "layer_norm", "matmul", "mean_all",
    "mean_pool_tokens", "permute", "relu", "reshape", "scale", "softmax_rows", "sub",
    "sum_all", "transpose", "Adam", "AdamState", "adam_step", "tensorio",
]
