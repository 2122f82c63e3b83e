"""From-scratch reverse-mode autodiff: tape, ops, Adam, and gradient checking."""

from .check import finite_diff_check
from .optim import AdamState, adam_step, cosine_lr
from .tape import (
    SUPPORTED_OPS,
    BatchNormState,
    GradError,
    Record,
    Tape,
    Tensor,
    active_tape,
    add,
    affine,
    as_tensor,
    batchnorm,
    concat,
    differentiate,
    dropout,
    exp,
    hinge,
    l1,
    logsumexp,
    masked_affine,
    mul,
    parameter,
    relu,
    scale,
    select_rows,
    sigmoid,
    slice_cols,
    softmax,
    softmax_cross_entropy,
    sqrt,
    sq_l2,
    sub,
    tanh,
    tmean,
    tsum,
)

__all__ = [
    "SUPPORTED_OPS", "BatchNormState", "GradError", "Record", "Tape", "Tensor",
    "active_tape", "add", "affine", "as_tensor", "batchnorm", "concat",
    "differentiate", "dropout", "exp", "hinge", "l1", "logsumexp",
    "masked_affine", "mul", "parameter", "relu", "scale", "select_rows",
    "sigmoid", "slice_cols", "softmax", "softmax_cross_entropy", "sqrt",
    "sq_l2", "sub", "tanh", "tmean", "tsum",
    "AdamState", "adam_step", "cosine_lr", "finite_diff_check",
]
