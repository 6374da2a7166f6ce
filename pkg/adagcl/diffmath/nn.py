"""
Parameter containers: a Module base class, Glorot initialization and MLPs.
"""

from __future__ import annotations

from typing import Dict, List, Sequence

import numpy as np

from adagcl.diffmath import ops
from adagcl.diffmath.value import Value, default_dtype
from adagcl.exceptions import ShapeError

ACTIVATIONS = {
    "relu": ops.relu,
    "tanh": ops.tanh,
    "sigmoid": ops.sigmoid,
}


def xavier_uniform(shape: Sequence[int], rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform draw: U(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    fan_in, fan_out = shape[0], shape[1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=tuple(shape)).astype(default_dtype())


class Module:
    """
    Base class that discovers parameters stored as attributes.

    Trainable leaves are Values with ``requires_grad``; nested Modules and
    lists of Modules are walked recursively in attribute order.
    """

    def named_parameters(self, prefix: str = "") -> Dict[str, Value]:
        found: Dict[str, Value] = {}
        for attr, item in vars(self).items():
            if attr.startswith("_"):
                continue
            key = f"{prefix}{attr}"
            if isinstance(item, Value) and item.requires_grad:
                found[key] = item
            elif isinstance(item, Module):
                found.update(item.named_parameters(f"{key}."))
            elif isinstance(item, (list, tuple)):
                for index, element in enumerate(item):
                    if isinstance(element, Module):
                        found.update(element.named_parameters(f"{key}.{index}."))
                    elif isinstance(element, Value) and element.requires_grad:
                        found[f"{key}.{index}"] = element
        return found

    def parameters(self) -> List[Value]:
        return list(self.named_parameters().values())

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.zero_grad()

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {name: param.data.copy() for name, param in self.named_parameters().items()}

    def restore(self, arrays: Dict[str, np.ndarray]) -> None:
        for name, param in self.named_parameters().items():
            param.data[...] = arrays[name]


class Mlp(Module):
    """
    Fully connected network; the activation applies between layers only.

    Args:
        widths: Layer widths including input and output, e.g. [2d, d, 1]
        rng: Generator used for Glorot initialization
        activation: Hidden activation tag (relu, tanh or sigmoid)
    """

    def __init__(self, widths: Sequence[int], rng: np.random.Generator, activation: str = "relu"):
        if len(widths) < 2:
            raise ShapeError(f"an MLP needs at least two widths, got {list(widths)}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.widths = list(widths)
        self.activation = activation
        self.weights = [
            Value.parameter(xavier_uniform((fan_in, fan_out), rng))
            for fan_in, fan_out in zip(widths[:-1], widths[1:])
        ]
        self.biases = [Value.parameter(np.zeros((1, fan_out), dtype=default_dtype())) for fan_out in widths[1:]]

    def __call__(self, x: Value) -> Value:
        if x.shape[-1] != self.widths[0]:
            raise ShapeError(f"MLP expects width {self.widths[0]}, got input of shape {x.shape}")
        act = ACTIVATIONS[self.activation]
        last = len(self.weights) - 1
        for index, (weight, bias) in enumerate(zip(self.weights, self.biases)):
            x = ops.add(ops.matmul(x, weight), bias)
            if index < last:
                x = act(x)
        return x

    def zero_(self) -> None:
        """Set every weight and bias to zero (used for closed-form checks)."""
        for param in self.parameters():
            param.data[...] = 0.0
