import math
from collections import defaultdict

import numpy as np
import pytest

from adagcl.diffmath import Value
from adagcl.exceptions import DataError, UsageError
from adagcl.models.interactions import InteractionTable
from adagcl.models.schemas import EvalReport
from adagcl.services import data_service, eval_service
from adagcl.services.encoder_service import EmbeddingState
from adagcl.services.eval_service import evaluate, ndcg_at_n, paired_t_test, rank_for_user, rank_items, recall_at_n, write_report


def _random_state(splits, rng, dim=4):
    return EmbeddingState.from_final(
        Value(rng.normal(size=(splits.user_count, dim))),
        Value(rng.normal(size=(splits.item_count, dim))),
    )


def _oracle_state(splits):
    """Users score exactly their test items 1 and everything else 0."""
    user_rows = splits.test.user_csr().toarray()
    return EmbeddingState.from_final(Value(user_rows), Value(np.eye(splits.item_count)))


def test_rank_items_orders_by_descending_score():
    np.testing.assert_array_equal(rank_items([2.0, 6.0, -2.0]), [1, 0, 2])


def test_rank_items_breaks_ties_by_index_and_removes_masked():
    np.testing.assert_array_equal(rank_items([1.0, 1.0, 1.0, 1.0]), [0, 1, 2, 3])
    np.testing.assert_array_equal(rank_items([0.1, 0.9, 0.5], masked=[1]), [2, 0])


def test_recall_and_ndcg_reference_values():
    assert recall_at_n([3, 1, 4, 5], {1, 5}, 2) == pytest.approx(0.5)
    assert ndcg_at_n([0, 1, 2], {1}, 3) == pytest.approx(0.6309, abs=1e-4)
    assert ndcg_at_n([1, 0, 2], {1}, 3) == pytest.approx(1.0)


def test_metrics_need_relevant_items():
    with pytest.raises(UsageError):
        recall_at_n([0, 1], set(), 1)


def test_evaluate_matches_naive_per_user_loop(planted_splits, rng):
    state = _random_state(planted_splits, rng)
    report = evaluate(state, planted_splits, mode="test", cutoffs=(5, 10))

    train_items = planted_splits.train.items_by_user()
    validation_items = planted_splits.validation.items_by_user()
    test_items = planted_splits.test.items_by_user()
    for position, user in enumerate(report.users):
        masked = np.concatenate([train_items[user], validation_items[user]])
        ranked = rank_for_user(state, user, masked)
        for n in (5, 10):
            assert report.per_user_recall[n][position] == pytest.approx(recall_at_n(ranked, test_items[user], n))
            assert report.per_user_ndcg[n][position] == pytest.approx(ndcg_at_n(ranked, test_items[user], n))
    assert report.users == sorted({int(u) for u in planted_splits.test.users})


def _naive_metrics(user_rows, item_rows, splits, n):
    """Plain-Python all-rank Recall@n / NDCG@n per user with test items."""
    seen, relevant = defaultdict(set), defaultdict(set)
    for user, item in splits.train.records + splits.validation.records:
        seen[user].add(item)
    for user, item in splits.test.records:
        relevant[user].add(item)

    recalls, ndcgs = {}, {}
    for user in sorted(relevant):
        scores = [sum(a * b for a, b in zip(user_rows[user], item_rows[item])) for item in range(len(item_rows))]
        ranked = sorted((i for i in range(len(item_rows)) if i not in seen[user]), key=lambda i: (-scores[i], i))
        top = ranked[:n]
        hits = [p for p, item in enumerate(top) if item in relevant[user]]
        recalls[user] = len(hits) / len(relevant[user])
        dcg = sum(1.0 / math.log2(p + 2) for p in hits)
        idcg = sum(1.0 / math.log2(p + 2) for p in range(min(n, len(relevant[user]))))
        ndcgs[user] = dcg / idcg
    return recalls, ndcgs


@pytest.mark.parametrize("instance", range(50))
def test_evaluate_matches_plain_python_oracle(double, instance):
    rng = np.random.default_rng(1000 + instance)
    users, items = int(rng.integers(3, 31)), int(rng.integers(10, 51))
    mask = rng.random((users, items)) < 0.35
    mask[0, :10] = True
    rows, cols = np.nonzero(mask)
    splits = data_service.split(InteractionTable.from_pairs(rows, cols, users, items), seed=instance)

    # integer embeddings on even instances produce exact score ties
    if instance % 2 == 0:
        user_rows, item_rows = rng.integers(-2, 3, size=(users, 3)), rng.integers(-2, 3, size=(items, 3))
    else:
        user_rows, item_rows = rng.normal(size=(users, 3)), rng.normal(size=(items, 3))
    state = EmbeddingState.from_final(Value(user_rows.astype(np.float64)), Value(item_rows.astype(np.float64)))
    report = evaluate(state, splits, mode="test", cutoffs=(5, 20))

    for n in (5, 20):
        recalls, ndcgs = _naive_metrics(user_rows.tolist(), item_rows.tolist(), splits, n)
        assert report.users == sorted(recalls)
        np.testing.assert_allclose(report.per_user_recall[n], [recalls[u] for u in report.users], rtol=0, atol=1e-12)
        np.testing.assert_allclose(report.per_user_ndcg[n], [ndcgs[u] for u in report.users], rtol=0, atol=1e-12)
        assert report.recall(n) == pytest.approx(np.mean(list(recalls.values())), abs=1e-12)


def test_evaluate_perfect_scores_give_full_marks(planted_splits):
    report = evaluate(_oracle_state(planted_splits), planted_splits, mode="test", cutoffs=(20,))
    assert report.recall(20) == pytest.approx(1.0)
    assert report.ndcg(20) == pytest.approx(1.0)


def test_validation_mode_masks_only_train(planted_splits, rng):
    state = _random_state(planted_splits, rng)
    report = evaluate(state, planted_splits, mode="validation", cutoffs=(10,))
    assert report.mode == "validation"
    assert report.users == sorted({int(u) for u in planted_splits.validation.users})


def test_recall_is_monotone_in_cutoff(planted_splits, rng):
    report = evaluate(_random_state(planted_splits, rng), planted_splits, cutoffs=(1, 5, 10, 20))
    recalls = [report.recall(n) for n in (1, 5, 10, 20)]
    assert recalls == sorted(recalls)


def test_threaded_evaluation_matches_serial(planted_splits, rng, monkeypatch):
    monkeypatch.setattr(eval_service, "CHUNK_USERS", 7)
    state = _random_state(planted_splits, rng)
    serial = evaluate(state, planted_splits, cutoffs=(5,), threads=1)
    threaded = evaluate(state, planted_splits, cutoffs=(5,), threads=4)
    assert threaded.per_user_recall == serial.per_user_recall
    assert threaded.per_user_ndcg == serial.per_user_ndcg


def test_evaluate_restricted_to_no_users_raises(planted_splits, rng):
    with pytest.raises(DataError):
        evaluate(_random_state(planted_splits, rng), planted_splits, users=np.array([], dtype=np.int64))


def test_evaluate_rejects_bad_arguments(planted_splits, rng):
    state = _random_state(planted_splits, rng)
    with pytest.raises(UsageError):
        evaluate(state, planted_splits, mode="train")
    with pytest.raises(UsageError):
        evaluate(state, planted_splits, cutoffs=(0,))


def test_paired_t_test_prefers_the_oracle(planted_splits, rng):
    oracle = evaluate(_oracle_state(planted_splits), planted_splits, cutoffs=(5,))
    random = evaluate(_random_state(planted_splits, rng), planted_splits, cutoffs=(5,))
    result = paired_t_test(oracle, random, metric="recall", cutoff=5)
    assert result["mean_difference"] > 0
    assert result["p_value"] < 0.05
    with pytest.raises(UsageError):
        paired_t_test(oracle, random, metric="precision", cutoff=5)


def test_write_report_round_trips(tmp_path, planted_splits, rng):
    report = evaluate(_random_state(planted_splits, rng), planted_splits, cutoffs=(5, 20), seed=4, config_hash="abc")
    write_report(report, tmp_path)
    loaded = EvalReport.model_validate_json((tmp_path / "report.json").read_text())
    assert loaded.summary() == pytest.approx(report.summary())
    assert loaded.seed == 4
    assert (tmp_path / "report.csv").read_text().startswith("cutoff,recall,ndcg")
