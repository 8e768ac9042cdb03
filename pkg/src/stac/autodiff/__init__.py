"""Minimal reverse-mode autodiff, MLP layers and optimiser updates."""
from .tensor import Parameter, Tensor, backprop, no_grad
from .nn import (
    MLP,
    AdamState,
    MlpSpec,
    Tape,
    adam_step,
    backward,
    dropout_mask,
    forward,
    grad_norm,
    polyak_update,
)

__all__ = [
    "MLP", "AdamState", "MlpSpec", "Parameter", "Tape", "Tensor",
    "adam_step", "backprop", "backward", "dropout_mask", "forward",
    "grad_norm", "no_grad", "polyak_update",
]
