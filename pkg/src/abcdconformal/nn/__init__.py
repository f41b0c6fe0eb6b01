"""Minimal differentiable network engine with concrete dropout and a
heteroscedastic Gaussian head."""

from .layers import (
    LayerSpec,
    activation,
    concrete_dropout,
    concrete_dropout_mask,
    conv1d,
    conv2d,
    dense,
    flatten,
    maxpool,
)
from .network import (
    DivergenceError,
    NetworkSpec,
    ShapeError,
    TrainedModel,
    forward,
    forward_batch,
    init_params,
    load_model,
    predict_mean_batch,
    save_model,
)
from .training import TrainConfig, TrainingDiverged, loss_and_grad, model_loss_and_grad, train

__all__ = [
    "LayerSpec",
    "NetworkSpec",
    "TrainedModel",
    "TrainConfig",
    "ShapeError",
    "DivergenceError",
    "TrainingDiverged",
    "dense",
    "conv1d",
    "conv2d",
    "maxpool",
    "flatten",
    "concrete_dropout",
    "activation",
    "concrete_dropout_mask",
    "init_params",
    "forward",
    "forward_batch",
    "predict_mean_batch",
    "loss_and_grad",
    "model_loss_and_grad",
    "train",
    "save_model",
    "load_model",
]
