import logging
import math

import numpy as np
import pytest

from adagcl.diffmath import Value, grad_check
from adagcl.exceptions import ShapeError
from adagcl.services import data_service
from adagcl.services.generative_service import (
    VgaeGenerator,
    decode_edges,
    edge_probabilities,
    generate_view,
    generator_forward,
    kl_to_standard_normal,
    reconstruction_loss,
    reparameterize,
    vgae_encode,
    vgae_loss,
)
from adagcl.services.objective_service import TripletBatch


def test_kl_vanishes_at_standard_normal(double):
    zeros = Value(np.zeros((4, 3)))
    assert kl_to_standard_normal(zeros, zeros).item() == pytest.approx(0.0)


def test_kl_of_unit_mean_is_half_per_dimension(double):
    mu = Value(np.ones((4, 3)))
    log_std = Value(np.zeros((4, 3)))
    assert kl_to_standard_normal(mu, log_std).item() == pytest.approx(1.5)


def test_reparameterize_with_fixed_noise(double):
    mu = Value(np.array([[1.0, -1.0]]))
    log_std = Value(np.array([[0.0, math.log(2.0)]]))
    latent = reparameterize(mu, log_std, None, noise=np.array([[0.5, 0.5]]))
    np.testing.assert_allclose(latent.data, [[1.5, 0.0]])


def test_reparameterize_is_reproducible_per_seed(double):
    mu = Value(np.zeros((3, 2)))
    log_std = Value(np.zeros((3, 2)))
    np.testing.assert_array_equal(reparameterize(mu, log_std, 5).data, reparameterize(mu, log_std, 5).data)


def test_reconstruction_of_zero_logits_is_log_two(double):
    assert reconstruction_loss(Value(np.zeros(3)), Value(np.zeros(5))).item() == pytest.approx(math.log(2))


def test_decode_is_symmetric_in_pair_order(double, small_graph, rng):
    generator = VgaeGenerator(small_graph.user_count, small_graph.item_count, 3, 1, rng)
    latent = Value(rng.normal(size=(small_graph.num_nodes, 3)))
    users = np.array([0, 2, 4])
    items = np.array([1, 3, 0]) + small_graph.user_count
    forward, _ = decode_edges(latent, users, items, generator.decoder, small_graph.user_count)
    backward, _ = decode_edges(latent, items, users, generator.decoder, small_graph.user_count)
    np.testing.assert_array_equal(forward.data, backward.data)


def test_decode_rejects_same_side_pairs(small_graph, rng):
    generator = VgaeGenerator(small_graph.user_count, small_graph.item_count, 3, 1, rng)
    latent = Value(rng.normal(size=(small_graph.num_nodes, 3)))
    with pytest.raises(ShapeError):
        decode_edges(latent, [0], [1], generator.decoder, small_graph.user_count)


def test_zero_decoder_keeps_edges_with_probability_half(small_graph, rng):
    generator = VgaeGenerator(small_graph.user_count, small_graph.item_count, 3, 1, rng)
    generator.decoder.zero_()
    state = generator_forward(small_graph, generator, rng)
    np.testing.assert_allclose(edge_probabilities(state, generator, small_graph), 0.5)


def test_generate_view_with_certain_keep_is_identity(small_graph, rng):
    view = generate_view(small_graph, np.ones(small_graph.num_edges), rng)
    np.testing.assert_array_equal(view.edge_keys(), small_graph.edge_keys())
    np.testing.assert_allclose(view.norm_values, small_graph.norm_values)


def test_generate_view_falls_back_when_nothing_survives(small_graph, rng, caplog):
    with caplog.at_level(logging.WARNING):
        view = generate_view(small_graph, np.zeros(small_graph.num_edges), rng)
    assert view is small_graph
    assert "falling back" in caplog.text


def test_generate_view_can_add_candidate_edges(small_graph, rng):
    candidates = (np.array([0, 1]), np.array([4, 4]), np.array([1.0, 0.0]))
    view = generate_view(small_graph, np.ones(small_graph.num_edges), rng, candidates=candidates)
    assert view.num_edges == small_graph.num_edges + 1
    assert view.has_edges([0], [4]).all()


def test_generate_view_validates_probability_count(small_graph, rng):
    with pytest.raises(ShapeError):
        generate_view(small_graph, np.ones(3), rng)


def test_encode_shapes(small_graph, rng):
    generator = VgaeGenerator(small_graph.user_count, small_graph.item_count, 4, 2, rng)
    state = vgae_encode(small_graph, generator)
    assert state.mu.shape == (small_graph.num_nodes, 4)
    assert state.log_std.shape == (small_graph.num_nodes, 4)
    means = state.mean_embeddings()
    assert means.final_user.shape == (small_graph.user_count, 4)
    assert means.final_item.shape == (small_graph.item_count, 4)


def test_vgae_loss_parts_and_gradient(double, small_graph, rng):
    generator = VgaeGenerator(small_graph.user_count, small_graph.item_count, 3, 1, rng)
    noise = rng.standard_normal((small_graph.num_nodes, 3))
    negatives = data_service.sample_non_edges(small_graph, 4, rng)
    batch = TripletBatch(np.array([0, 1]), np.array([0, 1]), np.array([4, 4]))

    def loss(use_bpr=True):
        state = vgae_encode(small_graph, generator)
        state.latent = reparameterize(state.mu, state.log_std, None, noise=noise)
        return vgae_loss(state, generator, small_graph, negatives, batch, lambda2=1e-3, use_bpr=use_bpr)

    result = loss()
    parts = result.parts
    assert result.total.item() == pytest.approx(parts["kl"] + parts["dis"] + parts["bpr"] + 1e-3 * parts["reg"])
    assert loss(use_bpr=False).parts["bpr"] == 0.0
    assert grad_check(lambda: loss().total, generator.parameters()).passed


def test_generated_views_keep_edges_at_their_probability(small_graph):
    probs = np.linspace(0.2, 0.9, small_graph.num_edges)
    rng = np.random.default_rng(21)
    kept = np.zeros(small_graph.num_edges)
    trials = 2000
    for _ in range(trials):
        view = generate_view(small_graph, probs, rng)
        kept += view.has_edges(small_graph.edge_users, small_graph.edge_items)
    np.testing.assert_allclose(kept / trials, probs, atol=0.05)


def test_reparameterized_samples_have_the_requested_moments(double):
    rows = 20000
    mu = Value(np.tile([1.5, -0.5], (rows, 1)))
    log_std = Value(np.tile([0.0, math.log(2.0)], (rows, 1)))
    sample = reparameterize(mu, log_std, np.random.default_rng(4)).data
    np.testing.assert_allclose(sample.mean(axis=0), [1.5, -0.5], atol=0.07)
    np.testing.assert_allclose(sample.std(axis=0), [1.0, 2.0], rtol=0.05)
