"""Release-year estimation from title typography with robust CNN regression."""

from .config import Method, RunConfig
from .losses import LossKind, LossSpec, loss_gradient, loss_value
from .models import cnn_regressor, init_parameters, mlp_regressor
from .trainer import Regimen, SwitchController, TrainConfig, Trainer, train

__version__ = "0.1.0"

__all__ = [
    "LossKind",
    "LossSpec",
    "Method",
    "Regimen",
    "RunConfig",
    "SwitchController",
    "TrainConfig",
    "Trainer",
    "cnn_regressor",
    "init_parameters",
    "loss_gradient",
    "loss_value",
    "mlp_regressor",
    "train",
]
