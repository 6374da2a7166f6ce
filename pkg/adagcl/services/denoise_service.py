"""
Denoising view service: per-layer learned edge gates drawn from a stretched
hard-concrete relaxation, with an expected-L0 sparsity penalty.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from adagcl.config import HARD_CONCRETE_BETA, HARD_CONCRETE_GAMMA, HARD_CONCRETE_ZETA
from adagcl.diffmath import Mlp, Module, Value, ops, xavier_uniform
from adagcl.exceptions import DomainError, ShapeError, UsageError
from adagcl.models.interactions import InteractionGraph
from adagcl.services.encoder_service import EmbeddingState
from adagcl.services.objective_service import LossBreakdown, TripletBatch, bpr_loss, l2_regularization

# Configure logging
logger = logging.getLogger(__name__)


@dataclass
class EdgeGateState:
    """Per-layer edge logits and gates of one denoiser pass."""

    alphas: List[Value] = field(default_factory=list)
    gates: List[Value] = field(default_factory=list)

    def mean_gates(self) -> List[float]:
        """Kept-edge fraction per layer."""
        return [float(np.mean(g.data)) if g.size else 0.0 for g in self.gates]


class DenoiseGenerator(Module):
    """
    Own embedding tables plus one gate MLP (2d -> d -> 1) per layer.

    Args:
        user_count: Number of users I
        item_count: Number of items J
        dim: Embedding dimension d
        layers: Number of gated propagation layers
        rng: Initialization stream
        beta: Concrete temperature
        gamma: Lower stretch bound (< 0)
        zeta: Upper stretch bound (> 1)
        mode: Propagation mode ("residual" or "standard")
    """

    def __init__(
        self,
        user_count: int,
        item_count: int,
        dim: int,
        layers: int,
        rng: np.random.Generator,
        beta: float = HARD_CONCRETE_BETA,
        gamma: float = HARD_CONCRETE_GAMMA,
        zeta: float = HARD_CONCRETE_ZETA,
        mode: str = "residual",
    ):
        check_constants(beta, gamma, zeta)
        self.user_table = Value.parameter(xavier_uniform((user_count, dim), rng))
        self.item_table = Value.parameter(xavier_uniform((item_count, dim), rng))
        self.gate_mlps = [Mlp([2 * dim, dim, 1], rng) for _ in range(layers)]
        self.user_count = user_count
        self.item_count = item_count
        self.layers = layers
        self.beta = beta
        self.gamma = gamma
        self.zeta = zeta
        self.mode = mode


def check_constants(beta: float, gamma: float, zeta: float) -> None:
    if beta <= 0 or gamma >= 0 or zeta <= 1:
        raise UsageError(f"hard-concrete constants need beta>0, gamma<0, zeta>1 (got {beta}, {gamma}, {zeta})")


def edge_score(user_rows: Value, item_rows: Value, gate_mlp: Mlp) -> Value:
    """alpha per edge = MLP(concat(user row, item row)), shape (E,)."""
    if user_rows.shape != item_rows.shape:
        raise ShapeError(f"edge endpoints differ in shape: {user_rows.shape} vs {item_rows.shape}")
    scores = gate_mlp(ops.concat([user_rows, item_rows], axis=1))
    return ops.reshape(scores, (user_rows.shape[0],))


def sample_gate(
    alpha: Value,
    noise_u,
    beta: float = HARD_CONCRETE_BETA,
    gamma: float = HARD_CONCRETE_GAMMA,
    zeta: float = HARD_CONCRETE_ZETA,
    training: bool = True,
) -> Value:
    """
    Stretched and clamped concrete sample.

    s = sigmoid((log u - log(1 - u) + alpha) / beta), s_bar = s * (zeta - gamma) + gamma,
    gate = clamp(s_bar, 0, 1). Outside training u is fixed at 0.5.

    Raises:
        DomainError: if any noise value lies outside (0, 1)
    """
    check_constants(beta, gamma, zeta)
    if training:
        u = np.asarray(noise_u, dtype=np.float64)
        if np.any(u <= 0.0) or np.any(u >= 1.0):
            raise DomainError("gate noise must lie strictly inside (0, 1)")
        logistic = np.broadcast_to(np.log(u) - np.log1p(-u), alpha.shape)
    else:
        logistic = np.zeros(alpha.shape)
    shifted = ops.add(alpha, Value(logistic.astype(alpha.data.dtype)))
    s = ops.sigmoid(ops.mul(shifted, 1.0 / beta))
    stretched = ops.add(ops.mul(s, zeta - gamma), gamma)
    return ops.clamp(stretched, 0.0, 1.0)


def expected_l0(
    alpha: Value,
    beta: float = HARD_CONCRETE_BETA,
    gamma: float = HARD_CONCRETE_GAMMA,
    zeta: float = HARD_CONCRETE_ZETA,
) -> Value:
    """Probability that each gate is non-zero: sigmoid(alpha - beta * log(-gamma / zeta))."""
    check_constants(beta, gamma, zeta)
    return ops.sigmoid(ops.sub(alpha, beta * float(np.log(-gamma / zeta))))


def denoise_forward(
    graph: InteractionGraph,
    generator: DenoiseGenerator,
    rng: Optional[np.random.Generator] = None,
    training: bool = True,
    gate_override: Optional[Sequence[np.ndarray]] = None,
) -> tuple:
    """
    Gated propagation over the observed edges.

    At each layer the normalized edge weights are multiplied by that layer's
    gates before the residual propagation step; the gates are scored from the
    previous layer's embeddings.

    Args:
        graph: Training graph
        generator: Denoiser parameters
        rng: Gate-noise stream (required when training without overrides)
        training: Sample noisy gates (True) or use the deterministic u = 0.5 gates
        gate_override: Optional fixed gate arrays per layer (test hook); L_c is
            still computed from the scored alphas

    Returns:
        Tuple of (EmbeddingState, L_c Value, EdgeGateState)
    """
    if generator.user_count != graph.user_count or generator.item_count != graph.item_count:
        raise ShapeError("denoiser tables do not match the graph dimensions")
    if gate_override is not None and len(gate_override) != generator.layers:
        raise ShapeError(f"expected {generator.layers} gate arrays, got {len(gate_override)}")
    if training and gate_override is None and rng is None:
        raise UsageError("training-mode denoising needs a noise stream")

    users, items = graph.edge_users, graph.edge_items
    norm = graph.norm_values
    gate_state = EdgeGateState()
    penalties = []
    layer_user = [generator.user_table]
    layer_item = [generator.item_table]
    for layer, gate_mlp in enumerate(generator.gate_mlps):
        prev_user, prev_item = layer_user[-1], layer_item[-1]
        alpha = edge_score(ops.gather_rows(prev_user, users), ops.gather_rows(prev_item, items), gate_mlp)
        penalties.append(ops.sum(expected_l0(alpha, generator.beta, generator.gamma, generator.zeta)))
        if gate_override is not None:
            gate = Value(np.asarray(gate_override[layer], dtype=alpha.data.dtype).reshape(alpha.shape))
        else:
            noise = rng.uniform(np.finfo(np.float64).tiny, 1.0, size=alpha.shape) if training else None
            gate = sample_gate(alpha, noise, generator.beta, generator.gamma, generator.zeta, training)
        weights = ops.mul(gate, Value(norm.astype(alpha.data.dtype)))
        z_user = ops.edge_spmm(users, items, weights, prev_item, graph.user_count)
        z_item = ops.edge_spmm(items, users, weights, prev_user, graph.item_count)
        if generator.mode == "residual":
            z_user = ops.add(z_user, prev_user)
            z_item = ops.add(z_item, prev_item)
        layer_user.append(z_user)
        layer_item.append(z_item)
        gate_state.alphas.append(alpha)
        gate_state.gates.append(gate)

    final_user = ops.stack_sum(layer_user)
    final_item = ops.stack_sum(layer_item)
    if generator.mode == "standard":
        final_user = ops.mul(final_user, 1.0 / (generator.layers + 1))
        final_item = ops.mul(final_item, 1.0 / (generator.layers + 1))
    state = EmbeddingState(
        generator.user_table,
        generator.item_table,
        layer_user,
        layer_item,
        final_user,
        final_item,
        generator.layers,
        generator.user_table.shape[1],
    )
    l_c = ops.stack_sum(penalties) if penalties else Value(np.zeros((), dtype=generator.user_table.data.dtype))
    return state, l_c, gate_state


def denoise_loss(
    state: EmbeddingState,
    l_c: Value,
    batch: TripletBatch,
    params,
    lambda2: float,
    lc_weight: float = 1e-2,
    use_bpr: bool = True,
) -> LossBreakdown:
    """lc_weight * L_c + L_bpr^den + lambda2 * ||Theta_den||^2."""
    total = ops.mul(l_c, lc_weight)
    parts = {"lc": l_c.item(), "bpr": 0.0, "reg": 0.0}
    if use_bpr:
        bpr = bpr_loss(state, batch)
        parts["bpr"] = bpr.item()
        total = ops.add(total, bpr)
    if lambda2 > 0:
        reg = l2_regularization(params)
        parts["reg"] = reg.item()
        total = ops.add(total, ops.mul(reg, lambda2))
    return LossBreakdown(total, parts)
