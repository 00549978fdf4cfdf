from .gradcheck import grad_check
from .tensor import (
    LAYER_NORM_EPS,
    NORM_EPS,
    Tensor,
    add,
    as_tensor,
    clip,
    concat,
    div,
    exp,
    gelu,
    l2_normalize,
    layer_norm,
    log,
    logsumexp,
    matmul,
    mean,
    mul,
    reshape,
    softmax,
    sub,
    swap_last,
    take,
    tanh,
    tsum,
)
from .tensorfile import (
    decode_tensor,
    encode_tensor,
    load_checkpoint,
    load_tensor,
    read_tensor,
    save_checkpoint,
    save_tensor,
)

__all__ = [
    "LAYER_NORM_EPS", "NORM_EPS", "Tensor", "add", "as_tensor", "clip", "concat", "div", "exp",
    "gelu", "grad_check", "l2_normalize", "layer_norm", "log", "logsumexp", "matmul", "mean",
    "mul", "reshape", "softmax", "sub", "swap_last", "take", "tanh", "tsum",
    "decode_tensor", "encode_tensor", "load_checkpoint", "load_tensor", "read_tensor",
    "save_checkpoint", "save_tensor",
]
