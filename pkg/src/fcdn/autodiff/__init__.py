"""Minimal reverse-mode automatic differentiation for the FCDN layers."""
from . import nn
from .gradcheck import grad_check
from .optim import Adam, AdamState, adam_step
from .tensor import (
    AutodiffError,
    Tensor,
    backward,
    cross_entropy,
    default_dtype,
    no_grad,
    precision,
)

__all__ = [
    "Adam",
    "AdamState",
    "AutodiffError",
    "Tensor",
    "adam_step",
    "backward",
    "cross_entropy",
    "default_dtype",
    "grad_check",
    "nn",
    "no_grad",
    "precision",
]
