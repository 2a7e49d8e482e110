"""Tensor autodiff core: graph recording, primitives, Adam, gradient checks."""

from . import kernels
from .adam import Adam, clip_global_norm
from .gradcheck import CASES, finite_diff_check, finite_diff_probe, run_all_checks
from .tensor import (
    Tensor,
    add,
    amax,
    backward,
    concat,
    cosine_sim,
    div,
    dropout,
    exp,
    gather_rows_cols,
    l2_normalize,
    layer_norm,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    nan_debug,
    narrow,
    power,
    relu,
    reshape,
    segment_mean,
    set_nan_debug,
    softmax,
    squared_error,
    sub,
    sum_,
    take_rows,
    transpose,
)

BACKEND = kernels.BACKEND

__all__ = [
    "Adam",
    "BACKEND",
    "CASES",
    "Tensor",
    "add",
    "amax",
    "backward",
    "clip_global_norm",
    "concat",
    "cosine_sim",
    "div",
    "dropout",
    "exp",
    "finite_diff_check",
    "finite_diff_probe",
    "gather_rows_cols",
    "kernels",
    "l2_normalize",
    "layer_norm",
    "log",
    "log_softmax",
    "matmul",
    "mean",
    "mul",
    "nan_debug",
    "narrow",
    "power",
    "relu",
    "reshape",
    "run_all_checks",
    "segment_mean",
    "set_nan_debug",
    "softmax",
    "squared_error",
    "sub",
    "sum_",
    "take_rows",
    "transpose",
]
