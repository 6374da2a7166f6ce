"""
Reverse-mode differentiable engine with sparse products, MLPs and Adam.
"""

from adagcl.diffmath.value import Value, as_value, default_dtype, grad_enabled, no_grad, precision
from adagcl.diffmath.sparse import SparseMatrix
from adagcl.diffmath.nn import Mlp, Module, xavier_uniform
from adagcl.diffmath.optim import Adam, AdamState, adam_step
from adagcl.diffmath.gradcheck import GradCheckReport, grad_check
from adagcl.diffmath.checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "Adam",
    "AdamState",
    "GradCheckReport",
    "Mlp",
    "Module",
    "SparseMatrix",
    "Value",
    "adam_step",
    "as_value",
    "default_dtype",
    "grad_check",
    "grad_enabled",
    "load_checkpoint",
    "no_grad",
    "precision",
    "save_checkpoint",
    "xavier_uniform",
]
