"""Minimal fp64 tensor library with reverse-mode autodiff."""
from .kernels import BACKEND
from .ops import (
    abs_,
    add,
    broadcast_add,
    clamp,
    concat,
    conv1x1,
    conv3x3,
    conv3x3_levels,
    conv_out_size,
    exp,
    log,
    matmul,
    mean_over,
    mul,
    power,
    relu,
    reshape,
    scale,
    sigmoid,
    smooth_l1,
    softmax,
    stack,
    sub,
    subsample2,
    sum_,
    take,
    transpose,
    upsample2,
)
from .optim import SGD, sgd_step
from .tensor import (
    GraphError,
    ShapeError,
    Tensor,
    as_tensor,
    backward,
    no_grad,
    pin_stop_gradients,
    stop_gradient,
)

__all__ = [
    "BACKEND", "GraphError", "SGD", "ShapeError", "Tensor", "abs_", "add", "as_tensor",
    "backward", "broadcast_add", "clamp", "concat", "conv1x1", "conv3x3", "conv3x3_levels", "conv_out_size",
    "exp", "log", "matmul", "mean_over", "mul", "no_grad", "pin_stop_gradients", "power",
    "relu", "reshape", "scale", "sgd_step", "sigmoid", "smooth_l1", "softmax", "stack",
    "stop_gradient", "sub", "subsample2", "sum_", "take", "transpose", "upsample2",
]
