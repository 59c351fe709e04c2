"""Deterministic float64 autodiff core: tensors, layers, Adam, checkpoints."""

from .tensor import (
    Tensor,
    as_tensor,
    concat,
    exp,
    log,
    matmul,
    mean_,
    no_grad,
    relu,
    reshape,
    softmax,
    sum_,
    tanh,
    transpose,
)
from .functional import (
    batch_norm,
    conv2d,
    conv_transpose1d,
    dropout,
    layer_norm,
    mse_loss,
    softmax_cross_entropy,
)
from .store import ParamStore
from .layers import (
    BatchNorm,
    Conv2d,
    ConvTranspose1d,
    LayerNorm,
    Linear,
    MultiHeadSelfAttention,
    TransformerEncoderLayer,
    sinusoidal_positional_encoding,
)
from .optim import Adam
from .checkpoint import MAGIC, VERSION, load_state, save_state
from .gradcheck import GradCheckResult, gradient_check

__all__ = [
    "Tensor",
    "as_tensor",
    "concat",
    "exp",
    "log",
    "matmul",
    "mean_",
    "no_grad",
    "relu",
    "reshape",
    "softmax",
    "sum_",
    "tanh",
    "transpose",
    "batch_norm",
    "conv2d",
    "conv_transpose1d",
    "dropout",
    "layer_norm",
    "mse_loss",
    "softmax_cross_entropy",
    "ParamStore",
    "BatchNorm",
    "Conv2d",
    "ConvTranspose1d",
    "LayerNorm",
    "Linear",
    "MultiHeadSelfAttention",
    "TransformerEncoderLayer",
    "sinusoidal_positional_encoding",
    "Adam",
    "MAGIC",
    "VERSION",
    "load_state",
    "save_state",
    "GradCheckResult",
    "gradient_check",
]
