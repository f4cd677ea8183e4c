"""Minimal reverse-mode tensor engine, optimizer and gradient checker."""
from . import functional
from .gradcheck import check_gradients, numerical_grad, relative_error
from .module import Module, kaiming_uniform, parameter
from .optim import AdamW, poly_lr
from .tensor import (NonFiniteError, Tensor, default_dtype, grad_enabled, no_grad, precision,
                     set_default_dtype)

__all__ = [
    "AdamW", "Module", "NonFiniteError", "Tensor", "check_gradients", "default_dtype",
    "functional", "grad_enabled", "kaiming_uniform", "no_grad", "numerical_grad", "parameter",
    "poly_lr", "precision", "relative_error", "set_default_dtype",
]
