"""
Objective service: BPR, InfoNCE, and the composite upper/lower losses.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from adagcl.diffmath import Value, default_dtype, ops
from adagcl.exceptions import ShapeError, UsageError
from adagcl.services.encoder_service import EmbeddingState

# Configure logging
logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TripletBatch:
    """(user, positive item, negative item) training triples."""

    users: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray

    def __post_init__(self):
        if not (self.users.shape == self.positives.shape == self.negatives.shape):
            raise ShapeError("triple columns differ in length")

    def __len__(self) -> int:
        return int(self.users.size)

    @classmethod
    def empty(cls) -> "TripletBatch":
        blank = np.empty(0, dtype=np.int64)
        return cls(blank, blank, blank)

    @property
    def triples(self):
        return list(zip(self.users.tolist(), self.positives.tolist(), self.negatives.tolist()))

    def node_sets(self):
        """Distinct users and items (positives and negatives) of the batch, ascending."""
        return np.unique(self.users), np.unique(np.concatenate([self.positives, self.negatives]))


@dataclass(frozen=True)
class ContrastiveConfig:
    """Temperature and loss weights of the upper-level objective."""

    tau: float = 0.2
    lambda1: float = 0.1
    lambda2: float = 1e-5
    scope: str = "batch"

    def __post_init__(self):
        if self.tau <= 0:
            raise UsageError("tau must be positive")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise UsageError("loss weights must be non-negative")
        if self.scope not in ("batch", "full"):
            raise UsageError(f"unknown contrast scope {self.scope!r}")


@dataclass
class LossBreakdown:
    """A scalar loss Value and its named float components."""

    total: Value
    parts: Dict[str, float] = field(default_factory=dict)

    def as_dict(self, prefix: str = "") -> Dict[str, float]:
        out = {f"{prefix}{name}": value for name, value in self.parts.items()}
        out[f"{prefix}total"] = float(self.total.item())
        return out


def zero() -> Value:
    return Value(np.zeros((), dtype=default_dtype()))


def bpr_loss(state: EmbeddingState, batch: TripletBatch) -> Value:
    """
    Mean over triples of -log sigmoid(y_ui - y_uj); 0 for an empty batch.
    """
    if len(batch) == 0:
        return zero()
    users = ops.gather_rows(state.final_user, batch.users)
    positives = ops.gather_rows(state.final_item, batch.positives)
    negatives = ops.gather_rows(state.final_item, batch.negatives)
    margin = ops.row_dot(users, ops.sub(positives, negatives))
    return ops.mul(ops.mean(ops.log_sigmoid(margin)), -1.0)


def infonce(view1: Value, view2: Value, tau: float) -> Value:
    """
    Mean over anchors of -log softmax of cosine similarities / tau, where the
    positive for row i of view1 is row i of view2 and every row of view2 is in
    the denominator.
    """
    if view1.shape != view2.shape:
        raise ShapeError(f"views differ in shape: {view1.shape} vs {view2.shape}")
    if view1.shape[0] < 2:
        raise ShapeError("InfoNCE needs at least two rows")
    if tau <= 0:
        raise UsageError("tau must be positive")
    left = ops.l2_normalize_rows(view1)
    right = ops.l2_normalize_rows(view2)
    logits = ops.mul(ops.matmul(left, ops.transpose(right)), 1.0 / tau)
    positive = ops.mul(ops.row_dot(left, right), 1.0 / tau)
    return ops.mean(ops.sub(ops.logsumexp(logits, axis=1), positive))


def ssl_loss(view1: EmbeddingState, view2: EmbeddingState, batch: TripletBatch, tau: float, scope: str = "batch") -> Value:
    """User-side plus item-side InfoNCE over the batch's nodes (or all nodes)."""
    if scope == "full":
        users = np.arange(view1.final_user.shape[0])
        items = np.arange(view1.final_item.shape[0])
    else:
        users, items = batch.node_sets()
    total = zero()
    if users.size >= 2:
        total = ops.add(total, infonce(ops.gather_rows(view1.final_user, users), ops.gather_rows(view2.final_user, users), tau))
    if items.size >= 2:
        total = ops.add(total, infonce(ops.gather_rows(view1.final_item, items), ops.gather_rows(view2.final_item, items), tau))
    return total


def l2_regularization(params) -> Value:
    """Sum of squared Frobenius norms."""
    params = list(params)
    if not params:
        return zero()
    return ops.stack_sum([ops.frobenius_sq(p) for p in params])


def upper_loss(
    main_state: EmbeddingState,
    view1: Optional[EmbeddingState],
    view2: Optional[EmbeddingState],
    batch: TripletBatch,
    cfg: ContrastiveConfig,
    main_params,
) -> LossBreakdown:
    """
    L_bpr + lambda1 * L_ssl + lambda2 * ||Theta_main||^2.

    The SSL term is skipped when lambda1 == 0 or either view is absent.
    """
    bpr = bpr_loss(main_state, batch)
    total = bpr
    parts = {"bpr": float(bpr.item()), "ssl": 0.0, "reg": 0.0}
    if cfg.lambda1 > 0 and view1 is not None and view2 is not None:
        ssl = ssl_loss(view1, view2, batch, cfg.tau, cfg.scope)
        parts["ssl"] = float(ssl.item())
        total = ops.add(total, ops.mul(ssl, cfg.lambda1))
    if cfg.lambda2 > 0:
        reg = l2_regularization(main_params)
        parts["reg"] = float(reg.item())
        total = ops.add(total, ops.mul(reg, cfg.lambda2))
    return LossBreakdown(total, parts)


def lower_loss(gen: Optional[LossBreakdown], den: Optional[LossBreakdown]) -> LossBreakdown:
    """L_gen + L_den; either part may be absent (ablation variants)."""
    total = zero()
    parts: Dict[str, float] = {}
    for prefix, part in (("gen_", gen), ("den_", den)):
        if part is None:
            continue
        total = ops.add(total, part.total)
        parts.update(part.as_dict(prefix))
    return LossBreakdown(total, parts)
