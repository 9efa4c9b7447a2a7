from . import ops
from .optim import RMSProp, clip_weights, rmsprop_step
from .tensor import (
    ShapeError,
    TapeError,
    Tensor,
    backward,
    frozen,
    get_dtype,
    grad,
    is_grad_enabled,
    no_grad,
    precision64,
    set_precision,
    zero_grad,
)

__all__ = [
    "ops", "RMSProp", "clip_weights", "rmsprop_step", "ShapeError", "TapeError",
    "Tensor", "backward", "frozen", "get_dtype", "grad", "is_grad_enabled",
    "no_grad", "precision64", "set_precision", "zero_grad",
]
