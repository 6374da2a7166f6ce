"""
Evaluation service: all-rank top-N ranking with Recall@N and NDCG@N.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from adagcl.config import DEFAULT_CUTOFFS
from adagcl.exceptions import DataError, UsageError
from adagcl.models.interactions import InteractionTable, SplitSet
from adagcl.models.schemas import CutoffMetrics, EvalReport
from adagcl.services.encoder_service import EmbeddingState, score_all_items

# Configure logging
logger = logging.getLogger(__name__)

CHUNK_USERS = 256


def rank_items(scores: np.ndarray, masked: Optional[Iterable[int]] = None) -> np.ndarray:
    """
    Item indices by descending score, ties by ascending index; masked items
    are removed from the ranking.
    """
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    if masked is not None:
        masked = np.asarray(list(masked) if not isinstance(masked, np.ndarray) else masked, dtype=np.int64)
        if masked.size:
            order = order[~np.isin(order, masked)]
    return order


def rank_for_user(state: EmbeddingState, user: int, train_items: Optional[Iterable[int]] = None) -> np.ndarray:
    """All-rank ordering of one user's candidate items."""
    return rank_items(score_all_items(state, user), train_items)


def _check_relevant(relevant) -> set:
    relevant = set(int(i) for i in relevant)
    if not relevant:
        raise UsageError("a metric needs at least one relevant item")
    return relevant


def recall_at_n(ranked: Sequence[int], relevant: Iterable[int], n: int) -> float:
    """|top-n ∩ relevant| / |relevant|."""
    relevant = _check_relevant(relevant)
    hits = sum(1 for item in list(ranked)[:n] if int(item) in relevant)
    return hits / len(relevant)


def ndcg_at_n(ranked: Sequence[int], relevant: Iterable[int], n: int) -> float:
    """Binary-relevance NDCG with 1 / log2(position + 1) gains (positions start at 1)."""
    relevant = _check_relevant(relevant)
    dcg = sum(1.0 / np.log2(p + 2) for p, item in enumerate(list(ranked)[:n]) if int(item) in relevant)
    idcg = sum(1.0 / np.log2(p + 2) for p in range(min(n, len(relevant))))
    return float(dcg / idcg)


def _gain_table(n: int) -> np.ndarray:
    return 1.0 / np.log2(np.arange(n) + 2.0)


def _user_items(table: InteractionTable, user: int) -> np.ndarray:
    # records are sorted by user
    start, stop = np.searchsorted(table.users, [user, user + 1])
    return table.items[start:stop]


def _score_chunk(
    user_rows: np.ndarray,
    item_matrix: np.ndarray,
    users: np.ndarray,
    masks: List[InteractionTable],
    relevant: List[np.ndarray],
    cutoffs: Sequence[int],
) -> Tuple[Dict[int, np.ndarray], Dict[int, np.ndarray]]:
    """Per-user recall/NDCG for one chunk of users (read-only on its inputs)."""
    top = max(cutoffs)
    gains = _gain_table(top)
    scores = user_rows @ item_matrix.T
    recall = {n: np.zeros(users.size) for n in cutoffs}
    ndcg = {n: np.zeros(users.size) for n in cutoffs}
    for row, user in enumerate(users):
        masked = np.concatenate([_user_items(table, user) for table in masks]) if masks else None
        ranked = rank_items(scores[row], masked)[:top]
        hit = np.isin(ranked, relevant[row])
        count = relevant[row].size
        for n in cutoffs:
            hits_n = hit[:n]
            recall[n][row] = hits_n.sum() / count
            ndcg[n][row] = (gains[:hits_n.size] * hits_n).sum() / gains[:min(n, count)].sum()
    return recall, ndcg


def evaluate(
    state: EmbeddingState,
    splits: SplitSet,
    mode: str = "test",
    cutoffs: Sequence[int] = DEFAULT_CUTOFFS,
    threads: int = 1,
    users: Optional[np.ndarray] = None,
    items: Optional[np.ndarray] = None,
    epoch: Optional[int] = None,
    config_hash: Optional[str] = None,
    seed: Optional[int] = None,
) -> EvalReport:
    """
    Macro-averaged Recall@N and NDCG@N over every evaluable user.

    Args:
        state: Frozen embeddings
        splits: Splits providing the masks and the target set
        mode: "validation" (mask train) or "test" (mask train and validation)
        cutoffs: Cutoffs N
        threads: Worker threads for chunked scoring
        users: Optional restriction of the evaluated users
        items: Optional restriction of the relevant items (item-group reports)
        epoch, config_hash, seed: Run metadata copied into the report

    Returns:
        EvalReport

    Raises:
        DataError: if no user has a relevant item in the target split
    """
    if mode not in ("validation", "test"):
        raise UsageError(f"mode must be 'validation' or 'test', got {mode!r}")
    cutoffs = sorted({int(n) for n in cutoffs})
    if not cutoffs or cutoffs[0] < 1:
        raise UsageError("cutoffs must be positive")
    target = splits.validation if mode == "validation" else splits.test
    masks = [splits.train] if mode == "validation" else [splits.train, splits.validation]

    target_users, target_items = target.users, target.items
    if items is not None:
        keep = np.isin(target_items, items)
        target_users, target_items = target_users[keep], target_items[keep]
    evaluable = np.unique(target_users)
    if users is not None:
        evaluable = np.intersect1d(evaluable, np.asarray(users, dtype=np.int64))
    if evaluable.size == 0:
        raise DataError(f"no evaluable users in the {mode} split")

    relevant = [target_items[target_users == u] for u in evaluable]
    user_matrix = state.final_user.data.astype(np.float64)
    item_matrix = state.final_item.data.astype(np.float64)
    bounds = list(range(0, evaluable.size, CHUNK_USERS)) + [evaluable.size]
    chunks = list(zip(bounds[:-1], bounds[1:]))

    def run(chunk):
        start, stop = chunk
        chunk_users = evaluable[start:stop]
        return _score_chunk(user_matrix[chunk_users], item_matrix, chunk_users, masks, relevant[start:stop], cutoffs)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(chunk) for chunk in chunks]

    per_recall = {n: np.concatenate([r[0][n] for r in results]) for n in cutoffs}
    per_ndcg = {n: np.concatenate([r[1][n] for r in results]) for n in cutoffs}
    report = EvalReport(
        mode=mode,
        cutoffs=cutoffs,
        metrics={n: CutoffMetrics(recall=float(per_recall[n].mean()), ndcg=float(per_ndcg[n].mean())) for n in cutoffs},
        users=evaluable.tolist(),
        per_user_recall={n: per_recall[n].tolist() for n in cutoffs},
        per_user_ndcg={n: per_ndcg[n].tolist() for n in cutoffs},
        config_hash=config_hash,
        seed=seed,
        epoch=epoch,
    )
    logger.info(f"Evaluated {evaluable.size} users ({mode}): {report.summary()}")
    return report


def paired_t_test(report_a: EvalReport, report_b: EvalReport, metric: str = "recall", cutoff: int = 20) -> Dict[str, float]:
    """
    Paired t-test over per-user metric vectors of two reports on the same users.

    Returns:
        Dict with statistic, p_value and mean_difference (a - b)
    """
    if report_a.users != report_b.users:
        raise UsageError("paired test needs reports over the same users")
    if metric not in ("recall", "ndcg"):
        raise UsageError(f"unknown metric {metric!r}")
    vectors = "per_user_recall" if metric == "recall" else "per_user_ndcg"
    a = np.asarray(getattr(report_a, vectors)[cutoff])
    b = np.asarray(getattr(report_b, vectors)[cutoff])
    result = stats.ttest_rel(a, b)
    return {
        "statistic": float(result.statistic),
        "p_value": float(result.pvalue),
        "mean_difference": float(np.mean(a - b)),
    }


def write_report(report: EvalReport, directory) -> None:
    """report.json plus a per-cutoff metrics CSV."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "report.json").write_text(report.model_dump_json(indent=2), encoding="utf-8")
    rows = [{"cutoff": n, "recall": report.recall(n), "ndcg": report.ndcg(n)} for n in report.cutoffs]
    pd.DataFrame(rows).to_csv(directory / "report.csv", index=False)
