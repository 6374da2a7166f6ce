"""
Generative view service: a variational graph auto-encoder that encodes the
interaction graph, samples a latent per node, decodes edge probabilities and
resamples the observed edges into a generated view.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from adagcl.diffmath import Mlp, Module, Value, ops, xavier_uniform
from adagcl.exceptions import ShapeError
from adagcl.models.interactions import InteractionGraph
from adagcl.services.encoder_service import EmbeddingState, propagate
from adagcl.services.objective_service import LossBreakdown, TripletBatch, bpr_loss, l2_regularization

# Configure logging
logger = logging.getLogger(__name__)

LOG_STD_BOUNDS = (-10.0, 10.0)


@dataclass
class VgaeState:
    """
    One forward pass of the generator. All (I+J)-row tensors stack users
    above items.
    """

    encoded: Value
    mu: Value
    log_std: Value
    latent: Optional[Value] = None
    edge_logits: Optional[Value] = None
    user_count: int = 0

    def mean_embeddings(self) -> EmbeddingState:
        """Users/items split of the mean embeddings (used for the generator's BPR term)."""
        users = ops.gather_rows(self.mu, np.arange(self.user_count))
        items = ops.gather_rows(self.mu, np.arange(self.user_count, self.mu.shape[0]))
        return EmbeddingState.from_final(users, items)


class VgaeGenerator(Module):
    """
    GCN encoder tables, mean and log-std heads, and an edge decoder.

    Args:
        user_count: Number of users I
        item_count: Number of items J
        dim: Embedding dimension d
        layers: Encoder propagation depth
        rng: Initialization stream
        mode: Propagation mode of the encoder
    """

    def __init__(self, user_count: int, item_count: int, dim: int, layers: int, rng: np.random.Generator, mode: str = "residual"):
        self.user_table = Value.parameter(xavier_uniform((user_count, dim), rng))
        self.item_table = Value.parameter(xavier_uniform((item_count, dim), rng))
        self.mu_head = Mlp([dim, dim, dim], rng)
        self.std_head = Mlp([dim, dim, dim], rng)
        self.decoder = Mlp([2 * dim, dim, 1], rng)
        self.user_count = user_count
        self.item_count = item_count
        self.layers = layers
        self.mode = mode


def vgae_encode(graph: InteractionGraph, generator: VgaeGenerator) -> VgaeState:
    """
    Propagate the generator's own tables and apply the two heads row-wise.

    Returns:
        VgaeState with encoded, mu and log_std of shape (I+J) x d
    """
    if generator.user_count != graph.user_count or generator.item_count != graph.item_count:
        raise ShapeError("generator tables do not match the graph dimensions")
    state = propagate(graph, generator.user_table, generator.item_table, generator.layers, generator.mode)
    encoded = ops.concat([state.final_user, state.final_item], axis=0)
    mu = generator.mu_head(encoded)
    log_std = ops.clamp(generator.std_head(encoded), *LOG_STD_BOUNDS)
    return VgaeState(encoded=encoded, mu=mu, log_std=log_std, user_count=graph.user_count)


def reparameterize(mu: Value, log_std: Value, rng, noise: Optional[np.ndarray] = None) -> Value:
    """
    latent = mu + exp(log_std) * eps with eps ~ N(0, 1).

    Args:
        mu: Mean Value
        log_std: Log standard deviation Value of the same shape
        rng: numpy Generator or integer seed
        noise: Optional fixed eps (test hook)
    """
    if mu.shape != log_std.shape:
        raise ShapeError(f"mu {mu.shape} and log_std {log_std.shape} differ")
    if noise is None:
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        noise = rng.standard_normal(mu.shape)
    eps = Value(np.broadcast_to(np.asarray(noise, dtype=mu.data.dtype), mu.shape))
    return ops.add(mu, ops.mul(ops.exp(log_std), eps))


def decode_edges(latent: Value, node_a, node_b, decoder: Mlp, user_count: int) -> Tuple[Value, Value]:
    """
    Decode node pairs (stacked indexing) into edge logits and probabilities.

    Pairs are canonicalized so the user-side row comes first, which makes the
    result independent of listing order.

    Returns:
        Tuple of (logits, probabilities), both of shape (E,)
    """
    node_a = np.asarray(node_a, dtype=np.int64)
    node_b = np.asarray(node_b, dtype=np.int64)
    users = np.minimum(node_a, node_b)
    items = np.maximum(node_a, node_b)
    if users.size and (users.max() >= user_count or items.min() < user_count or items.max() >= latent.shape[0]):
        raise ShapeError("each decoded pair must join one user node and one item node")
    pairs = ops.concat([ops.gather_rows(latent, users), ops.gather_rows(latent, items)], axis=1)
    logits = ops.reshape(decoder(pairs), (users.size,))
    return logits, ops.sigmoid(logits)


def generate_view(
    graph: InteractionGraph,
    probs: np.ndarray,
    rng: np.random.Generator,
    candidates: Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]] = None,
) -> InteractionGraph:
    """
    Keep each observed edge independently with its decoded probability.

    Args:
        graph: Source graph
        probs: Probabilities aligned with the graph's edge order
        rng: View-sampling stream
        candidates: Optional (users, items, probs) of unobserved pairs that may
            also be added to the view

    Returns:
        The generated graph, or the source graph when nothing survives
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != (graph.num_edges,):
        raise ShapeError(f"expected {graph.num_edges} probabilities, got {probs.shape}")
    keep = rng.random(graph.num_edges) < probs
    users, items = graph.edge_users[keep], graph.edge_items[keep]
    if candidates is not None:
        cand_users, cand_items, cand_probs = candidates
        add = rng.random(len(cand_users)) < np.asarray(cand_probs, dtype=np.float64)
        users = np.concatenate([users, cand_users[add]])
        items = np.concatenate([items, cand_items[add]])
    if users.size == 0:
        logger.warning("Generated view dropped every edge; falling back to the original graph")
        return graph
    return InteractionGraph.from_edges(users, items, graph.user_count, graph.item_count)


def kl_to_standard_normal(mu: Value, log_std: Value) -> Value:
    """
    Closed-form KL(N(mu, exp(log_std)^2) || N(0, 1)), summed over dimensions
    and averaged over nodes.
    """
    variance = ops.exp(ops.mul(log_std, 2.0))
    per_entry = ops.mul(ops.sub(ops.sub(ops.add(ops.mul(mu, mu), variance), 1.0), ops.mul(log_std, 2.0)), 0.5)
    return ops.mean(ops.sum(per_entry, axis=1))


def reconstruction_loss(pos_logits: Value, neg_logits: Value) -> Value:
    """Mean binary cross-entropy: observed pairs labelled 1, sampled non-edges 0."""
    count = pos_logits.size + neg_logits.size
    total = ops.add(ops.sum(ops.log_sigmoid(pos_logits)), ops.sum(ops.log_sigmoid(ops.mul(neg_logits, -1.0))))
    return ops.mul(total, -1.0 / count)


def vgae_loss(
    state: VgaeState,
    generator: VgaeGenerator,
    graph: InteractionGraph,
    negatives: Tuple[np.ndarray, np.ndarray],
    batch: TripletBatch,
    lambda2: float,
    use_bpr: bool = True,
    positives: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> LossBreakdown:
    """
    L_kl + L_dis + L_bpr^gen + lambda2 * ||Theta_gen||^2.

    Args:
        state: Forward pass with ``latent`` populated
        generator: Generator owning the decoder and parameters
        graph: Graph whose observed edges are the positive reconstruction targets
        negatives: (users, items) of sampled non-edges
        batch: Triples for the task-aware BPR term
        lambda2: Weight-decay strength
        use_bpr: False drops the BPR term (reconstruction-only ablation)
        positives: Optional (users, items) subset of observed edges to
            reconstruct instead of the whole graph
    """
    kl = kl_to_standard_normal(state.mu, state.log_std)
    user_count = graph.user_count
    pos_users, pos_items = positives if positives is not None else (graph.edge_users, graph.edge_items)
    pos_logits, _ = decode_edges(state.latent, pos_users, np.asarray(pos_items) + user_count, generator.decoder, user_count)
    neg_users, neg_items = negatives
    neg_logits, _ = decode_edges(state.latent, neg_users, np.asarray(neg_items) + user_count, generator.decoder, user_count)
    dis = reconstruction_loss(pos_logits, neg_logits)
    total = ops.add(kl, dis)
    parts = {"kl": kl.item(), "dis": dis.item(), "bpr": 0.0, "reg": 0.0}
    if use_bpr:
        bpr = bpr_loss(state.mean_embeddings(), batch)
        parts["bpr"] = bpr.item()
        total = ops.add(total, bpr)
    if lambda2 > 0:
        reg = l2_regularization(generator.parameters())
        parts["reg"] = reg.item()
        total = ops.add(total, ops.mul(reg, lambda2))
    return LossBreakdown(total, parts)


def generator_forward(graph: InteractionGraph, generator: VgaeGenerator, rng: np.random.Generator) -> VgaeState:
    """Encode then reparameterize (the latent is drawn from ``rng``)."""
    state = vgae_encode(graph, generator)
    state.latent = reparameterize(state.mu, state.log_std, rng)
    return state


def edge_probabilities(state: VgaeState, generator: VgaeGenerator, graph: InteractionGraph) -> np.ndarray:
    """Decoded keep-probabilities of every observed edge, as a plain array."""
    _, probs = decode_edges(state.latent, graph.edge_users, graph.edge_items + graph.user_count, generator.decoder, graph.user_count)
    return probs.data.astype(np.float64)
