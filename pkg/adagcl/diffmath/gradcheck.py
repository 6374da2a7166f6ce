"""
Finite-difference verification of analytic gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Sequence

import numpy as np

from adagcl.diffmath.value import Value
from adagcl.exceptions import NumericalError


@dataclass
class GradCheckReport:
    """Max relative discrepancy per parameter tensor, and the verdict."""

    discrepancies: List[float] = field(default_factory=list)
    tolerance: float = 1e-4

    @property
    def passed(self) -> bool:
        return all(d < self.tolerance for d in self.discrepancies)

    @property
    def worst(self) -> float:
        return max(self.discrepancies, default=0.0)


def _evaluate(f: Callable[[], Value]) -> float:
    value = f().data
    if value.size != 1:
        raise NumericalError(f"grad_check needs a scalar function, got shape {value.shape}")
    result = float(value.reshape(-1)[0])
    if not np.isfinite(result):
        raise NumericalError("non-finite function value during grad_check")
    return result


def grad_check(
    f: Callable[[], Value],
    params: Sequence[Value],
    step: float = 1e-5,
    tol: float = 1e-4,
) -> GradCheckReport:
    """
    Compare backward() gradients with central finite differences.

    The discrepancy of an entry is |analytic - fd| / max(1, |fd|); the report
    keeps the maximum per parameter tensor. Parameters should be float64.

    Args:
        f: Rebuilds the scalar output from the current parameter buffers
        params: Leaves whose gradients are checked
        step: Finite-difference step
        tol: Pass threshold

    Returns:
        GradCheckReport
    """
    if step <= 0:
        raise ValueError("step must be positive")

    for param in params:
        param.grad = None
    root = f()
    root.backward()
    analytic = [
        np.zeros_like(p.data, dtype=np.float64) if p.grad is None else p.grad.astype(np.float64)
        for p in params
    ]
    for param in params:
        param.grad = None

    report = GradCheckReport(tolerance=tol)
    for param, grad in zip(params, analytic):
        if not np.all(np.isfinite(grad)):
            raise NumericalError(f"non-finite analytic gradient for {param.name or param.op}")
        worst = 0.0
        flat = param.data.reshape(-1)
        grad_flat = grad.reshape(-1)
        for index in range(flat.size):
            original = flat[index]
            flat[index] = original + step
            upper = _evaluate(f)
            flat[index] = original - step
            lower = _evaluate(f)
            flat[index] = original
            numeric = (upper - lower) / (2.0 * step)
            discrepancy = abs(grad_flat[index] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, discrepancy)
        report.discrepancies.append(worst)
    return report
