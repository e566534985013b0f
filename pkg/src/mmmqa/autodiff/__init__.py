from .gradcheck import grad_check, numeric_grad, relative_error
from .gru import GRU_FIELDS, GRUParams, gru_cell
from .optim import Adam, LrSchedule, OptimizerState, adam_step, clip_global_norm, global_norm, lr_at
from .tensor import (
    Tensor,
    abs_,
    add,
    as_tensor,
    column,
    concat,
    div,
    dropout,
    embedding,
    exp,
    gelu,
    get_default_dtype,
    getitem,
    is_grad_enabled,
    layer_norm,
    log,
    log_softmax,
    make_op,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    parameter,
    precision,
    relu,
    reshape,
    set_default_dtype,
    sigmoid,
    softmax,
    standardize,
    sub,
    sum_,
    tanh,
    transpose,
)
