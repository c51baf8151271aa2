"""Tensor engine, reverse-mode autodiff, Adam and MGCK checkpoints."""

from . import tensor as ops
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .optim import AdamState, adam_step
from .tensor import NonFiniteError, ShapeError, Tensor, no_grad

__all__ = [
    "ops",
    "Tensor",
    "ShapeError",
    "NonFiniteError",
    "no_grad",
    "AdamState",
    "adam_step",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
]
