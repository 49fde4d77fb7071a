"""Minimal reverse-mode automatic differentiation over numpy arrays."""

from . import ops
from .gradcheck import GradCheckReport, grad_check, rel_error
from .ops import (
    abs,
    add,
    bilinear_matrix,
    clip,
    concat,
    conv2d,
    conv_transpose2d,
    div,
    exp,
    gelu,
    getitem,
    global_avg_pool,
    l2_normalize,
    layer_norm,
    linear,
    log,
    log_softmax,
    matmul,
    maximum,
    mean,
    minimum,
    mul,
    neg,
    pad,
    relu,
    reshape,
    resize_bilinear,
    sigmoid,
    softmax,
    softplus,
    split,
    sqrt,
    sub,
    sum,
    tanh,
    transpose,
    upsample,
)
from .tensor import (
    Function,
    MacCounter,
    Tensor,
    as_tensor,
    count_macs,
    default_dtype,
    detect_anomaly,
    get_default_dtype,
    is_grad_enabled,
    mac_tag,
    no_grad,
    set_default_dtype,
)
