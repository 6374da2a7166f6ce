import json
import logging

import numpy as np
import pandas as pd
import pytest

from adagcl.exceptions import NumericalError
from adagcl.models.interactions import InteractionTable
from adagcl.models.schemas import TrainConfig
from adagcl.services import data_service, trainer_service
from adagcl.services.denoise_service import denoise_forward, denoise_loss
from adagcl.services.eval_service import evaluate
from adagcl.services.objective_service import ContrastiveConfig, lower_loss, upper_loss
from adagcl.services.trainer_service import TrainHistory, epoch_batches, fit, init_state, load_state, sample_triplets, save_state, train_step


def _params_equal(first, second):
    assert first.keys() == second.keys()
    for name in first:
        np.testing.assert_array_equal(first[name], second[name])


def test_sample_triplets_draws_observed_positives_and_unobserved_negatives(planted_splits, rng):
    train = planted_splits.train
    batch = sample_triplets(train, 256, rng)
    assert len(batch) == 256
    keys = train.edge_keys()
    assert np.isin(batch.users * train.item_count + batch.positives, keys).all()
    assert not np.isin(batch.users * train.item_count + batch.negatives, keys).any()


def test_saturated_users_are_skipped(rng, caplog):
    train = InteractionTable.from_pairs([0, 0, 1], [0, 1, 0], 2, 2)
    with caplog.at_level(logging.WARNING):
        batch = sample_triplets(train, 50, rng)
    assert set(batch.users.tolist()) == {1}
    assert set(batch.negatives.tolist()) == {1}
    assert "interacted with every item" in caplog.text


def test_epoch_batches_cover_each_interaction_once(planted_splits, rng):
    train = planted_splits.train
    batches = list(epoch_batches(train, 100, rng))
    keys = np.concatenate([b.users * train.item_count + b.positives for b in batches])
    np.testing.assert_array_equal(np.sort(keys), train.edge_keys())
    assert all(len(b) <= 100 for b in batches)


def test_lightgcn_configuration_builds_no_generators(tiny_config):
    state = init_state(tiny_config.with_overrides(lambda1=0.0), 10, 12)
    assert state.vgae is None and state.denoiser is None
    assert list(state.optimizers) == ["main"]
    assert list(state.modules()) == ["main"]


@pytest.mark.parametrize(
    "variant, expected",
    [
        ("full", ["main", "vgae", "denoiser"]),
        ("gen_gen", ["main", "vgae", "vgae2"]),
        ("edge_drop", ["main"]),
        ("no_task", ["main", "vgae", "denoiser"]),
    ],
)
def test_variants_build_their_modules(tiny_config, variant, expected):
    state = init_state(tiny_config.with_overrides(variant=variant), 10, 12)
    assert list(state.modules()) == expected


def test_full_step_reports_both_levels(tiny_config, planted_splits, rng):
    graph = data_service.build_graph(planted_splits.train)
    state = init_state(tiny_config, planted_splits.user_count, planted_splits.item_count)
    metrics = train_step(state, graph, sample_triplets(planted_splits.train, 64, rng))
    for key in ("upper_total", "upper_bpr", "upper_ssl", "lower_total", "lower_gen_kl", "lower_gen_dis", "lower_den_lc"):
        assert np.isfinite(metrics[key]), key
    assert 0.0 <= metrics["gate_layer1"] <= 1.0
    assert 0.0 < metrics["view1_kept"] <= 1.0


def test_edge_drop_step_has_no_lower_level(tiny_config, planted_splits, rng):
    graph = data_service.build_graph(planted_splits.train)
    state = init_state(tiny_config.with_overrides(variant="edge_drop", edge_drop_ratio=0.2), planted_splits.user_count, planted_splits.item_count)
    metrics = train_step(state, graph, sample_triplets(planted_splits.train, 64, rng))
    assert metrics["upper_ssl"] > 0
    assert "view2_kept" in metrics
    assert not any(key.startswith("lower_") for key in metrics)


def test_gen_gen_step_trains_both_generators(tiny_config, planted_splits, rng):
    graph = data_service.build_graph(planted_splits.train)
    state = init_state(tiny_config.with_overrides(variant="gen_gen"), planted_splits.user_count, planted_splits.item_count)
    before = state.vgae_second.snapshot()
    metrics = train_step(state, graph, sample_triplets(planted_splits.train, 64, rng))
    assert "lower_gen2_total" in metrics
    changed = any(not np.array_equal(before[k], v) for k, v in state.vgae_second.snapshot().items())
    assert changed


def test_no_task_variant_drops_generator_bpr(tiny_config, planted_splits, rng):
    graph = data_service.build_graph(planted_splits.train)
    state = init_state(tiny_config.with_overrides(variant="no_task"), planted_splits.user_count, planted_splits.item_count)
    metrics = train_step(state, graph, sample_triplets(planted_splits.train, 64, rng))
    assert metrics["lower_gen_bpr"] == 0.0
    assert metrics["lower_den_bpr"] == 0.0


def test_levels_do_not_leak_gradients(tiny_config, planted_splits, rng):
    graph = data_service.build_graph(planted_splits.train)
    state = init_state(tiny_config, planted_splits.user_count, planted_splits.item_count)
    batch = sample_triplets(planted_splits.train, 64, rng)
    cfg = state.cfg

    main = state.encoder(graph)
    view1, view2 = trainer_service._views(state, graph, {})
    ccfg = ContrastiveConfig(tau=cfg.tau, lambda1=cfg.lambda1, lambda2=cfg.lambda2)
    upper_loss(main, view1, view2, batch, ccfg, state.encoder.parameters()).total.backward()
    assert all(p.grad is not None for p in state.encoder.parameters())
    assert all(p.grad is None for module in state.generator_modules() for p in module.parameters())

    state.encoder.zero_grad()
    gen = trainer_service._vgae_part(state, state.vgae, graph, batch)
    denoised, l_c, _ = denoise_forward(graph, state.denoiser, state.streams.gate_noise)
    den = denoise_loss(denoised, l_c, batch, state.denoiser.parameters(), cfg.lambda2, cfg.lc_weight)
    lower_loss(gen, den).total.backward()
    assert all(p.grad is None for p in state.encoder.parameters())
    assert any(p.grad is not None for p in state.denoiser.parameters())


def test_repeated_steps_on_one_batch_reduce_the_ranking_loss(tiny_config, planted_splits, rng):
    graph = data_service.build_graph(planted_splits.train)
    state = init_state(tiny_config.with_overrides(lr=0.01), planted_splits.user_count, planted_splits.item_count)
    batch = sample_triplets(planted_splits.train, 128, rng)
    losses = [train_step(state, graph, batch)["upper_bpr"] for _ in range(50)]
    assert losses[-1] < losses[0]


def test_fit_with_zero_epochs_returns_initial_state(tiny_config, planted_splits):
    state, history = fit(tiny_config.with_overrides(max_epochs=0), planted_splits)
    assert len(history) == 0
    reference = init_state(tiny_config, planted_splits.user_count, planted_splits.item_count)
    _params_equal(state.snapshot(), reference.snapshot())


def test_fit_is_deterministic(tiny_config, planted_splits):
    _, first = fit(tiny_config, planted_splits)
    _, second = fit(tiny_config, planted_splits)
    pd.testing.assert_frame_equal(first.to_frame(), second.to_frame())


def test_fit_without_contrast_never_builds_generators(tiny_config, planted_splits, monkeypatch):
    def forbidden(*args, **kwargs):
        raise AssertionError("generator constructed")

    monkeypatch.setattr(trainer_service, "VgaeGenerator", forbidden)
    monkeypatch.setattr(trainer_service, "DenoiseGenerator", forbidden)
    state, history = fit(tiny_config.with_overrides(lambda1=0.0), planted_splits)
    assert len(history) == tiny_config.max_epochs
    assert state.generator_modules() == []


@pytest.mark.slow
def test_fit_learns_block_structure(planted_splits, tmp_path):
    cfg = TrainConfig(
        dim=16, layers=2, lambda1=0.0, lr=0.05, batch_size=128, max_epochs=20, patience=20, seed=1, early_stop_cutoff=10
    )
    state, history = fit(cfg, planted_splits, output_dir=tmp_path)
    recalls = history.metric("val_recall@10")
    assert len(recalls) == 20
    assert max(recalls) > recalls[0]
    assert state.best_metric == pytest.approx(max(recalls))
    assert state.best_metric > 0.25
    assert (tmp_path / "history.csv").exists()
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["best_epoch"] == state.best_epoch


@pytest.mark.slow
def test_full_objective_learns_block_structure(planted_splits):
    cfg = TrainConfig(dim=16, layers=2, lr=0.05, batch_size=128, max_epochs=20, patience=20, seed=1, early_stop_cutoff=10)
    assert cfg.variant == "full" and cfg.lambda1 > 0
    graph = data_service.build_graph(planted_splits.train)
    untrained = init_state(cfg, planted_splits.user_count, planted_splits.item_count).main_embeddings(graph)
    untrained_recall = evaluate(untrained, planted_splits, mode="validation", cutoffs=(10,)).recall(10)

    seen = planted_splits.train.user_degrees()
    val_users = np.unique(planted_splits.validation.users)
    chance = np.mean([min(1.0, 10 / (planted_splits.item_count - seen[u])) for u in val_users])

    state, history = fit(cfg, planted_splits)
    assert {"vgae", "denoiser"} <= set(state.modules())
    assert all(value > 0 for value in history.metric("upper_ssl"))
    assert state.best_metric > untrained_recall
    assert state.best_metric > 1.5 * chance


def test_fit_writes_gate_diagnostics(tiny_config, planted_splits, tmp_path):
    fit(tiny_config, planted_splits, output_dir=tmp_path)
    gates = pd.read_csv(tmp_path / "gates.csv")
    assert {"epoch", "gate_layer1", "gate_layer2", "view1_kept"} <= set(gates.columns)
    assert len(gates) == tiny_config.max_epochs


def test_numerical_failure_dumps_diagnostics(tiny_config, planted_splits, tmp_path, monkeypatch):
    def explode(*args, **kwargs):
        raise NumericalError("non-finite loss value nan")

    monkeypatch.setattr(trainer_service, "train_step", explode)
    with pytest.raises(NumericalError):
        fit(tiny_config, planted_splits, output_dir=tmp_path)
    payload = json.loads((tmp_path / "diagnostics.json").read_text())
    assert payload["epoch"] == 1
    assert "non-finite" in payload["error"]
    assert payload["batch"]


def test_interrupt_flushes_checkpoint(tiny_config, planted_splits, tmp_path, monkeypatch):
    def interrupt(*args, **kwargs):
        raise KeyboardInterrupt

    monkeypatch.setattr(trainer_service, "train_step", interrupt)
    with pytest.raises(KeyboardInterrupt):
        fit(tiny_config, planted_splits, checkpoint_path=tmp_path / "checkpoint.bin")
    assert (tmp_path / "checkpoint.bin").exists()


def test_checkpoint_round_trip(tiny_config, planted_splits, tmp_path):
    state, _ = fit(tiny_config, planted_splits)
    path = save_state(state, tmp_path / "checkpoint.bin", checksum="abc123")
    loaded, meta = load_state(path)
    _params_equal(loaded.snapshot(), state.snapshot())
    assert loaded.cfg == state.cfg
    assert loaded.epoch == state.epoch
    assert loaded.best_metric == pytest.approx(state.best_metric)
    assert meta["split_checksum"] == "abc123"
    for name in ("batch", "vgae_noise", "gate_noise"):
        np.testing.assert_array_equal(loaded.streams[name].random(4), state.streams[name].random(4))


def test_history_metric_skips_missing_values():
    history = TrainHistory()
    history.append({"epoch": 1, "upper_total": 1.0})
    history.append({"epoch": 2, "upper_total": 0.5, "val_recall@20": 0.3})
    assert history.metric("val_recall@20") == [0.3]
    assert history.metric("upper_total") == [1.0, 0.5]
