"""Minimal numpy network substrate: layers, graphs, Adam, gradient checks."""

from .gradcheck import bce_logits_loss, grad_check, grad_check_report, mse_loss
from .layers import (
    Add,
    Concat,
    Conv2d,
    Dense,
    Flatten,
    GlobalAvgPool,
    Layer,
    MaxPool2,
    ReLU,
    Sigmoid,
    Upsample2,
)
from .network import INPUT, Network
from .optim import OptimizerState, PlateauDecay, adam_step

__all__ = [
    "Add", "Concat", "Conv2d", "Dense", "Flatten", "GlobalAvgPool", "Layer", "MaxPool2", "ReLU",
    "Sigmoid", "Upsample2", "INPUT", "Network", "OptimizerState", "PlateauDecay", "adam_step",
    "bce_logits_loss", "grad_check", "grad_check_report", "mse_loss",
]
