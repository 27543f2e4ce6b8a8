"""Minimal numpy neural runtime with manual backpropagation."""

from .layers import (
    GRU,
    BatchNorm,
    Conv1D,
    Dense,
    Dropout,
    Flatten,
    Layer,
    MaxPool1D,
    ReLU,
    ResidualBlock,
    Sequential,
    Sigmoid,
)
from .losses import weighted_bce, weighted_bce_logits
from .optim import AdamState, adam_step
from .serialize import (
    WEIGHTS_VERSION,
    apply_weights,
    dumps_weights,
    load_weights,
    parse_weights,
    save_weights,
)

__all__ = [
    "GRU",
    "BatchNorm",
    "Conv1D",
    "Dense",
    "Dropout",
    "Flatten",
    "Layer",
    "MaxPool1D",
    "ReLU",
    "ResidualBlock",
    "Sequential",
    "Sigmoid",
    "weighted_bce",
    "weighted_bce_logits",
    "AdamState",
    "adam_step",
    "WEIGHTS_VERSION",
    "apply_weights",
    "dumps_weights",
    "load_weights",
    "parse_weights",
    "save_weights",
]
