from .tensor import (
    Tensor,
    add,
    concat,
    conv1d,
    cross_entropy,
    getitem,
    log,
    lstm,
    matmul,
    maximum,
    mul,
    pointset_min_dist,
    relu,
    reshape,
    select_index,
    sigmoid,
    smooth_l1,
    softmax,
    sub,
    tanh,
    tmean,
    tsum,
)
from .layers import AdamState, Conv1dLayer, LinearLayer, LstmLayer, ParamDict
from .gradcheck import GradCheckReport, grad_check

__all__ = [
    "AdamState",
    "Conv1dLayer",
    "GradCheckReport",
    "LinearLayer",
    "LstmLayer",
    "ParamDict",
    "Tensor",
    "add",
    "concat",
    "conv1d",
    "cross_entropy",
    "getitem",
    "grad_check",
    "log",
    "lstm",
    "matmul",
    "maximum",
    "mul",
    "pointset_min_dist",
    "relu",
    "reshape",
    "select_index",
    "sigmoid",
    "smooth_l1",
    "softmax",
    "sub",
    "tanh",
    "tmean",
    "tsum",
]
