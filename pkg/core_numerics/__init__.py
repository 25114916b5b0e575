"""Dense tensor kernel with reverse-mode gradients."""

from core_numerics.errors import (
    ConfigError,
    DataError,
    InpaintingError,
    NumericalError,
    ShapeError,
)
from core_numerics.tensor import (
    GradCheckReport,
    Tensor,
    add,
    cross_entropy,
    dropout,
    embedding,
    gelu,
    grad_check,
    layer_norm,
    matmul,
    no_grad,
    reshape,
    scale,
    softmax,
    softmax_cross_entropy,
    tensor_sum,
    transpose,
)

__all__ = [
    "ConfigError",
    "DataError",
    "GradCheckReport",
    "InpaintingError",
    "NumericalError",
    "ShapeError",
    "Tensor",
    "add",
    "cross_entropy",
    "dropout",
    "embedding",
    "gelu",
    "grad_check",
    "layer_norm",
    "matmul",
    "no_grad",
    "reshape",
    "scale",
    "softmax",
    "softmax_cross_entropy",
    "tensor_sum",
    "transpose",
]
