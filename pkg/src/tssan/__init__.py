"""Temporal-segment self-attention networks for skeleton action recognition."""

from .tensor import Tensor, backward, no_grad

__all__ = ["Tensor", "backward", "no_grad"]
__version__ = "0.1.0"
