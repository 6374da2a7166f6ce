import numpy as np
import pytest

from adagcl.diffmath import Value, grad_check
from adagcl.exceptions import DomainError, UsageError
from adagcl.services.denoise_service import (
    DenoiseGenerator,
    denoise_forward,
    denoise_loss,
    expected_l0,
    sample_gate,
)
from adagcl.services.encoder_service import propagate
from adagcl.services.objective_service import TripletBatch


def test_gate_at_zero_logit_and_midpoint_noise_is_half(double):
    gate = sample_gate(Value(np.zeros(3)), np.full(3, 0.5))
    np.testing.assert_allclose(gate.data, 0.5)


def test_gate_saturates_at_extreme_logits(double):
    gate = sample_gate(Value(np.array([-50.0, 50.0])), np.full(2, 0.5))
    np.testing.assert_array_equal(gate.data, [0.0, 1.0])


def test_eval_gate_uses_midpoint_noise(double, rng):
    alpha = Value(rng.normal(size=6))
    np.testing.assert_allclose(sample_gate(alpha, None, training=False).data, sample_gate(alpha, np.full(6, 0.5)).data)


@pytest.mark.parametrize("noise", [0.0, 1.0, -0.2])
def test_gate_rejects_noise_outside_unit_interval(noise):
    with pytest.raises(DomainError):
        sample_gate(Value(np.zeros(1)), np.array([noise]))


def test_gate_constants_are_validated():
    with pytest.raises(UsageError):
        sample_gate(Value(np.zeros(1)), np.array([0.5]), beta=0.0)
    with pytest.raises(UsageError):
        expected_l0(Value(np.zeros(1)), gamma=0.1)


def test_expected_l0_reference_value_and_monotonicity(double):
    values = expected_l0(Value(np.array([-2.0, 0.0, 2.0]))).data
    assert values[1] == pytest.approx(0.8318, abs=1e-4)
    assert values[0] < values[1] < values[2]


def test_expected_l0_is_half_at_the_stretch_midpoint(double):
    alpha = (2.0 / 3.0) * np.log(0.1 / 1.1)
    assert expected_l0(Value(np.array([alpha]))).data[0] == pytest.approx(0.5, abs=1e-9)


def test_expected_l0_matches_sampled_nonzero_rate(double):
    rng = np.random.default_rng(0)
    alpha = Value(np.full(200_000, -1.0))
    noise = rng.uniform(1e-12, 1.0, size=200_000)
    rate = float(np.mean(sample_gate(alpha, noise).data > 0))
    assert rate == pytest.approx(expected_l0(Value(np.array([-1.0]))).item(), abs=0.01)


def test_open_gates_reproduce_plain_propagation(double, small_graph, rng):
    generator = DenoiseGenerator(small_graph.user_count, small_graph.item_count, 3, 2, rng)
    ones = [np.ones(small_graph.num_edges)] * 2
    state, _, _ = denoise_forward(small_graph, generator, gate_override=ones)
    reference = propagate(small_graph, generator.user_table, generator.item_table, 2)
    np.testing.assert_allclose(state.final_user.data, reference.final_user.data, rtol=1e-10)
    np.testing.assert_allclose(state.final_item.data, reference.final_item.data, rtol=1e-10)


def test_closed_gates_leave_scaled_tables(double, small_graph, rng):
    generator = DenoiseGenerator(small_graph.user_count, small_graph.item_count, 3, 2, rng)
    zeros = [np.zeros(small_graph.num_edges)] * 2
    state, _, gates = denoise_forward(small_graph, generator, gate_override=zeros)
    np.testing.assert_allclose(state.final_user.data, 3 * generator.user_table.data)
    np.testing.assert_allclose(state.final_item.data, 3 * generator.item_table.data)
    assert gates.mean_gates() == [0.0, 0.0]


def test_sparsity_penalty_with_constant_logits(double, small_graph, rng):
    generator = DenoiseGenerator(small_graph.user_count, small_graph.item_count, 3, 2, rng)
    for mlp in generator.gate_mlps:
        mlp.zero_()
    _, l_c, gates = denoise_forward(small_graph, generator, rng=rng)
    assert l_c.item() == pytest.approx(2 * small_graph.num_edges * 0.83183, rel=1e-4)
    assert all(np.all(alpha.data == 0) for alpha in gates.alphas)


def test_eval_mode_is_deterministic(small_graph, rng):
    generator = DenoiseGenerator(small_graph.user_count, small_graph.item_count, 3, 2, rng)
    first, _, _ = denoise_forward(small_graph, generator, training=False)
    second, _, _ = denoise_forward(small_graph, generator, training=False)
    np.testing.assert_array_equal(first.final_user.data, second.final_user.data)


def test_training_without_noise_stream_is_rejected(small_graph, rng):
    generator = DenoiseGenerator(small_graph.user_count, small_graph.item_count, 3, 1, rng)
    with pytest.raises(UsageError):
        denoise_forward(small_graph, generator)


def test_denoise_loss_parts_and_gradient(double, small_graph, rng):
    generator = DenoiseGenerator(small_graph.user_count, small_graph.item_count, 3, 2, rng)
    batch = TripletBatch(np.array([0, 3]), np.array([1, 4]), np.array([4, 2]))

    def loss():
        state, l_c, _ = denoise_forward(small_graph, generator, rng=np.random.default_rng(8))
        return denoise_loss(state, l_c, batch, generator.parameters(), lambda2=1e-3, lc_weight=1e-2)

    result = loss()
    parts = result.parts
    assert result.total.item() == pytest.approx(1e-2 * parts["lc"] + parts["bpr"] + 1e-3 * parts["reg"])
    assert grad_check(lambda: loss().total, generator.parameters()).passed
