"""Minimal dense-tensor neural-network engine for the leak classifier."""

from . import checkpoint, ops
from .net import (ArchitectureSpec, Model, VARIANT_2D, VARIANT_3D,
                  clone_model, forward, init_model, loss_and_grads,
                  parameter_count, parameter_shapes)
from .train import TrainConfig, evaluate_loss, train

__all__ = [
    "ArchitectureSpec", "Model", "TrainConfig", "VARIANT_2D", "VARIANT_3D",
    "checkpoint", "clone_model", "evaluate_loss", "forward", "init_model",
    "loss_and_grads", "ops", "parameter_count", "parameter_shapes", "train",
]
