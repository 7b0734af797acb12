from .functional import conv2d, dense, dropout, global_average_pool, maxpool2x2, relu
from .optim import Adam, Parameter, adam_step
from .tensor import ShapeError, Tensor, as_tensor, concat, grad_enabled, no_grad

__all__ = [
    "Adam",
    "Parameter",
    "ShapeError",
    "Tensor",
    "adam_step",
    "as_tensor",
    "concat",
    "conv2d",
    "dense",
    "dropout",
    "global_average_pool",
    "grad_enabled",
    "maxpool2x2",
    "no_grad",
    "relu",
]
