"""Minimal numpy tensor library with reverse-mode automatic differentiation."""

from .core import (
    TapeError,
    TapeNode,
    Tensor,
    as_tensor,
    backward,
    get_default_dtype,
    grad_enabled,
    make_op,
    no_grad,
    precision,
    set_default_dtype,
)
from .ops import (
    DimensionError,
    add,
    clip_min,
    concat,
    exp,
    gelu,
    getitem,
    layer_norm,
    log,
    matmul,
    mean,
    mul,
    pad,
    permute,
    pick,
    relu,
    resample_grid,
    reshape,
    roll,
    scale,
    sigmoid,
    softmax,
    sub,
)
from .ops import sum as tsum
from .conv import Conv3dKernel, batch_norm, conv3d, max_pool_axis
from .gradcheck import GradCheckReport, check_tensors, grad_check

__all__ = [
    "Conv3dKernel",
    "DimensionError",
    "GradCheckReport",
    "TapeError",
    "TapeNode",
    "Tensor",
    "add",
    "as_tensor",
    "backward",
    "batch_norm",
    "check_tensors",
    "clip_min",
    "concat",
    "conv3d",
    "exp",
    "gelu",
    "get_default_dtype",
    "getitem",
    "grad_check",
    "grad_enabled",
    "layer_norm",
    "log",
    "make_op",
    "matmul",
    "max_pool_axis",
    "mean",
    "mul",
    "no_grad",
    "pad",
    "permute",
    "pick",
    "precision",
    "relu",
    "resample_grid",
    "reshape",
    "roll",
    "scale",
    "set_default_dtype",
    "sigmoid",
    "softmax",
    "sub",
    "tsum",
]
