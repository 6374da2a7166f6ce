import numpy as np
import pytest

from adagcl.diffmath import Value, grad_check
from adagcl.models.interactions import InteractionTable
from adagcl.services import data_service
from adagcl.services.denoise_service import DenoiseGenerator, denoise_forward, denoise_loss
from adagcl.services.encoder_service import propagate
from adagcl.services.generative_service import VgaeGenerator, reparameterize, vgae_encode, vgae_loss
from adagcl.services.objective_service import ContrastiveConfig, TripletBatch, bpr_loss, infonce, lower_loss, upper_loss

INSTANCES = range(100)


def _random_graph(rng):
    users, items = int(rng.integers(2, 5)), int(rng.integers(2, 5))
    mask = rng.random((users, items)) < 0.5
    mask[:, 0] = True
    mask[0, -1] = False
    rows, cols = np.nonzero(mask)
    return data_service.build_graph(InteractionTable.from_pairs(rows, cols, users, items))


def _random_batch(graph, rng):
    picked = rng.choice(graph.num_edges, size=min(3, graph.num_edges), replace=False)
    negatives = rng.integers(0, graph.item_count, size=picked.size)
    return TripletBatch(graph.edge_users[picked], graph.edge_items[picked], negatives)


def _tables(graph, rng, dim):
    return (
        Value.parameter(rng.normal(size=(graph.user_count, dim))),
        Value.parameter(rng.normal(size=(graph.item_count, dim))),
    )


@pytest.mark.parametrize("seed", INSTANCES)
def test_ranking_and_contrastive_gradients(double, seed):
    rng = np.random.default_rng(seed)
    graph = _random_graph(rng)
    batch = _random_batch(graph, rng)
    dim = int(rng.integers(2, 5))
    main, first, second = (_tables(graph, rng, dim) for _ in range(3))
    cfg = ContrastiveConfig(tau=float(rng.uniform(0.1, 1.0)), lambda1=0.3, lambda2=1e-3)

    def objective():
        states = [propagate(graph, users, items, 2) for users, items in (main, first, second)]
        return upper_loss(states[0], states[1], states[2], batch, cfg, list(main)).total

    def ranking():
        return bpr_loss(propagate(graph, *main, 1), batch)

    params = [table for pair in (main, first, second) for table in pair]
    assert grad_check(objective, params).passed
    assert grad_check(ranking, list(main)).passed
    assert grad_check(lambda: infonce(first[0], second[0], cfg.tau), [first[0], second[0]]).passed


@pytest.mark.parametrize("seed", INSTANCES)
def test_generator_gradients(double, seed):
    rng = np.random.default_rng(seed)
    graph = _random_graph(rng)
    batch = _random_batch(graph, rng)
    vgae = VgaeGenerator(graph.user_count, graph.item_count, 2, 1, rng)
    denoiser = DenoiseGenerator(graph.user_count, graph.item_count, 2, 1, rng)
    noise = rng.standard_normal((graph.num_nodes, 2))
    negatives = data_service.sample_non_edges(graph, 1, rng)

    def generative():
        state = vgae_encode(graph, vgae)
        state.latent = reparameterize(state.mu, state.log_std, None, noise=noise)
        return vgae_loss(state, vgae, graph, negatives, batch, lambda2=1e-3)

    def denoising():
        state, l_c, _ = denoise_forward(graph, denoiser, rng=np.random.default_rng(seed))
        return denoise_loss(state, l_c, batch, denoiser.parameters(), lambda2=1e-3, lc_weight=1e-2)

    assert grad_check(lambda: generative().total, vgae.parameters()).passed
    assert grad_check(lambda: denoising().total, denoiser.parameters()).passed
    assert grad_check(lambda: lower_loss(generative(), denoising()).total, vgae.parameters() + denoiser.parameters()).passed
