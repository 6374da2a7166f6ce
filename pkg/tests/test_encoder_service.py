import numpy as np
import pytest

from adagcl.diffmath import Value, grad_check, ops
from adagcl.exceptions import ShapeError, UsageError
from adagcl.models.interactions import InteractionTable
from adagcl.services import data_service
from adagcl.services.encoder_service import GraphEncoder, predict, propagate, score_all_items, time_encoder_epoch


def _tables(graph, rng, dim=3):
    return (
        Value.parameter(rng.normal(size=(graph.user_count, dim))),
        Value.parameter(rng.normal(size=(graph.item_count, dim))),
    )


def test_zero_layers_returns_tables(double, small_graph, rng):
    users, items = _tables(small_graph, rng)
    state = propagate(small_graph, users, items, 0)
    np.testing.assert_array_equal(state.final_user.data, users.data)
    np.testing.assert_array_equal(state.final_item.data, items.data)


def test_residual_propagation_matches_dense_recurrence(double, small_graph, rng):
    users, items = _tables(small_graph, rng)
    state = propagate(small_graph, users, items, 3)

    dense = small_graph.normalized.to_dense()
    e_u, e_i = [users.data], [items.data]
    for _ in range(3):
        e_u.append(dense @ e_i[-1] + e_u[-1])
        e_i.append(dense.T @ e_u[-2] + e_i[-1])
    np.testing.assert_allclose(state.final_user.data, sum(e_u), rtol=1e-10)
    np.testing.assert_allclose(state.final_item.data, sum(e_i), rtol=1e-10)
    assert len(state.layer_user) == 4


def test_standard_propagation_averages_layers(double, small_graph, rng):
    users, items = _tables(small_graph, rng)
    state = propagate(small_graph, users, items, 2, mode="standard")

    dense = small_graph.normalized.to_dense()
    u1, i1 = dense @ items.data, dense.T @ users.data
    u2, i2 = dense @ i1, dense.T @ u1
    np.testing.assert_allclose(state.final_user.data, (users.data + u1 + u2) / 3, rtol=1e-10)
    np.testing.assert_allclose(state.final_item.data, (items.data + i1 + i2) / 3, rtol=1e-10)


def test_isolated_user_keeps_scaled_own_row(double, rng):
    table = InteractionTable.from_pairs([0, 1], [0, 1], 3, 2)
    graph = data_service.build_graph(table)
    users, items = _tables(graph, rng)
    state = propagate(graph, users, items, 2)
    np.testing.assert_allclose(state.final_user.data[2], 3 * users.data[2])


def test_propagation_gradient_is_correct(double, small_graph, rng):
    users, items = _tables(small_graph, rng)

    def loss():
        state = propagate(small_graph, users, items, 2)
        return ops.sum(ops.tanh(ops.matmul(state.final_user, ops.transpose(state.final_item))))

    assert grad_check(loss, [users, items]).passed


def test_propagate_validates_shapes(small_graph, rng):
    users = Value.parameter(rng.normal(size=(small_graph.user_count + 1, 3)))
    items = Value.parameter(rng.normal(size=(small_graph.item_count, 3)))
    with pytest.raises(ShapeError):
        propagate(small_graph, users, items, 1)
    with pytest.raises(UsageError):
        propagate(small_graph, users, items, 1, mode="bogus")


def test_predict_and_score_all_items(double, small_graph, rng):
    encoder = GraphEncoder(small_graph.user_count, small_graph.item_count, 4, 2, rng)
    state = encoder.frozen(small_graph)
    assert not state.final_user.requires_grad
    scores = score_all_items(state, 1)
    assert scores.shape == (small_graph.item_count,)
    assert scores[3] == pytest.approx(predict(state.final_user.data[1], state.final_item.data[3]))
    with pytest.raises(ShapeError):
        predict(np.ones(3), np.ones(4))
    with pytest.raises(UsageError):
        score_all_items(state, 99)


def test_encoder_exposes_two_tables(small_graph, rng):
    encoder = GraphEncoder(small_graph.user_count, small_graph.item_count, 4, 2, rng)
    assert set(encoder.named_parameters()) == {"user_table", "item_table"}


def test_time_encoder_epoch_reports_positive_duration(small_graph):
    assert time_encoder_epoch(small_graph, dim=4, layers=1, repeats=1) > 0


def test_single_edge_hand_evaluated(double):
    graph = data_service.build_graph(InteractionTable.from_pairs([0], [0], 1, 1))
    state = propagate(graph, Value(np.array([[1.0]])), Value(np.array([[2.0]])), 1)
    np.testing.assert_allclose(state.final_user.data, [[4.0]])
    np.testing.assert_allclose(state.final_item.data, [[5.0]])


@pytest.mark.parametrize("mode", ["residual", "standard"])
def test_propagation_is_linear_in_the_tables(double, small_graph, rng, mode):
    users, items = _tables(small_graph, rng)
    base = propagate(small_graph, users, items, 3, mode)
    scaled = propagate(small_graph, Value(-2.5 * users.data), Value(-2.5 * items.data), 3, mode)
    np.testing.assert_allclose(scaled.final_user.data, -2.5 * base.final_user.data, atol=1e-6)
    np.testing.assert_allclose(scaled.final_item.data, -2.5 * base.final_item.data, atol=1e-6)


def test_propagation_is_equivariant_to_item_order(double, small_table, rng):
    perm = rng.permutation(small_table.item_count)
    inverse = np.argsort(perm)
    permuted = InteractionTable.from_pairs(small_table.users, inverse[small_table.items], small_table.user_count, small_table.item_count)
    graph = data_service.build_graph(small_table)
    users, items = _tables(graph, rng)

    base = propagate(graph, users, items, 2)
    moved = propagate(data_service.build_graph(permuted), users, Value(items.data[perm]), 2)
    np.testing.assert_allclose(moved.final_item.data, base.final_item.data[perm], atol=1e-12)
    np.testing.assert_allclose(moved.final_user.data, base.final_user.data, atol=1e-12)
