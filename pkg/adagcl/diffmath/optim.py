"""
Adam optimizer with bias correction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from adagcl.diffmath.value import Value


@dataclass
class AdamState:
    """First/second moments keyed by parameter position, plus the step counter."""

    step: int = 0
    first: Dict[int, np.ndarray] = field(default_factory=dict)
    second: Dict[int, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Sequence[Value],
    state: AdamState,
    lr: float = 1e-3,
    betas: Tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """
    Apply one Adam update to every parameter holding a gradient, then zero gradients.

    Args:
        params: Parameters in a fixed order (moments are keyed by position)
        state: Moment buffers, updated in place
        lr: Learning rate
        betas: Exponential decay rates of the moments
        eps: Denominator stabilizer
    """
    beta1, beta2 = betas
    state.step += 1
    correction1 = 1.0 - beta1 ** state.step
    correction2 = 1.0 - beta2 ** state.step
    for index, param in enumerate(params):
        grad = param.grad
        if grad is None:
            continue
        m = state.first.get(index)
        v = state.second.get(index)
        if m is None:
            m = np.zeros_like(param.data)
            v = np.zeros_like(param.data)
        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad * grad
        state.first[index] = m
        state.second[index] = v
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
        param.data -= update.astype(param.data.dtype)
        param.grad = None


class Adam:
    """Adam bound to a fixed parameter list."""

    def __init__(self, params: Sequence[Value], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params: List[Value] = list(params)
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.state = AdamState()

    def step(self) -> None:
        adam_step(self.params, self.state, self.lr, self.betas, self.eps)