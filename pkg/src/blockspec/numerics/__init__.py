"""Tensor arithmetic, reverse-mode autodiff, parameters and optimizers."""

from .functional import ACTIVATIONS, activation, affine, embedding, rms_norm, weighted_cross_entropy
from .gradcheck import grad_check
from .optim import Optimizer, clip_grad_norm, cosine_lr
from .params import ParamSet, load_arrays, read_checkpoint, save_params, write_checkpoint
from .tensor import (
    ShapeError,
    Tensor,
    as_tensor,
    concat,
    log_softmax_np,
    no_grad,
    sigmoid_np,
    softmax_np,
    stack,
)

__all__ = [
    "ACTIVATIONS",
    "Optimizer",
    "ParamSet",
    "ShapeError",
    "Tensor",
    "activation",
    "affine",
    "as_tensor",
    "clip_grad_norm",
    "concat",
    "cosine_lr",
    "embedding",
    "grad_check",
    "load_arrays",
    "log_softmax_np",
    "no_grad",
    "read_checkpoint",
    "rms_norm",
    "save_params",
    "sigmoid_np",
    "softmax_np",
    "stack",
    "weighted_cross_entropy",
    "write_checkpoint",
]
