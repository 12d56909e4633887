from meta_prompting.autodiff.functional import (
    cross_entropy,
    embedding,
    linear,
    log_softmax,
    logsumexp,
    pick,
    softmax,
)
from meta_prompting.autodiff.grad import (
    backward,
    grad,
    graph_size,
    hvp,
    numerical_gradient,
    relative_error,
)
from meta_prompting.autodiff.tensor import (
    Tensor,
    add,
    as_tensor,
    broadcast_to,
    check_finite,
    check_finite_enabled,
    concat,
    div,
    enable_grad,
    exp,
    getitem,
    is_grad_enabled,
    log,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    relu,
    reshape,
    scatter,
    set_check_finite,
    sigmoid,
    stack,
    sub,
    sum_to,
    tanh,
    transpose,
    tsum,
    zeros,
)

__all__ = [
    "Tensor",
    "add",
    "as_tensor",
    "backward",
    "broadcast_to",
    "check_finite",
    "check_finite_enabled",
    "concat",
    "cross_entropy",
    "div",
    "embedding",
    "enable_grad",
    "exp",
    "getitem",
    "grad",
    "graph_size",
    "hvp",
    "is_grad_enabled",
    "linear",
    "log",
    "log_softmax",
    "logsumexp",
    "matmul",
    "mean",
    "mul",
    "neg",
    "no_grad",
    "numerical_gradient",
    "pick",
    "relative_error",
    "relu",
    "reshape",
    "scatter",
    "set_check_finite",
    "sigmoid",
    "softmax",
    "stack",
    "sub",
    "sum_to",
    "tanh",
    "transpose",
    "tsum",
    "zeros",
]
