"""
Experiment service: noise robustness, sparsity groups and the lambda1 sweep.
"""

import json
import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from adagcl.config import ITEM_GROUP_BOUNDARIES, LAMBDA1_GRID, NOISE_MODELS, NOISE_RATIOS, USER_GROUP_BOUNDARIES
from adagcl.exceptions import DataError, UsageError
from adagcl.models.interactions import SplitSet
from adagcl.models.schemas import TrainConfig
from adagcl.services import baseline_service, data_service, trainer_service
from adagcl.services.encoder_service import EmbeddingState
from adagcl.services.eval_service import evaluate
from adagcl.utils import charts

# Configure logging
logger = logging.getLogger(__name__)

KINDS = ("noise", "sparsity", "sweep")


def _trainer_for(model: str):
    if model == "full":
        return lambda cfg, splits, **kw: trainer_service.fit(cfg.with_overrides(variant="full"), splits, **kw)
    if model == "lightgcn":
        return baseline_service.train_lightgcn
    if model == "edge_drop":
        return baseline_service.train_edge_drop
    raise UsageError(f"unknown model {model!r}; expected one of {NOISE_MODELS}")


def _write(frame: pd.DataFrame, output_dir, stem: str) -> None:
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    frame.to_csv(output_dir / f"{stem}.csv", index=False)
    (output_dir / f"{stem}.json").write_text(
        json.dumps(frame.to_dict(orient="records"), indent=2, default=str), encoding="utf-8"
    )


def noise_robustness(
    cfg: TrainConfig,
    splits: SplitSet,
    ratios: Sequence[float] = NOISE_RATIOS,
    models: Sequence[str] = NOISE_MODELS,
    output_dir=None,
) -> pd.DataFrame:
    """
    Retrain each model on training graphs where a fraction of edges is
    replaced by fake ones; validation and test splits stay clean.

    Returns:
        DataFrame with columns model, ratio, recall@20, ndcg@20, relative_drop
        (a ratio-0 row per model is the clean reference)
    """
    clean = data_service.build_graph(splits.train)
    held_out = np.union1d(splits.validation.edge_keys(), splits.test.edge_keys())
    rows = []
    for model in models:
        train = _trainer_for(model)
        reference = None
        for ratio in [0.0] + [r for r in ratios if r > 0]:
            graph = data_service.inject_noise(clean, ratio, seed=cfg.seed, exclude=held_out)
            state, _ = train(cfg, splits, graph=graph)
            report = evaluate(state.main_embeddings(graph), splits, mode="test", cutoffs=(20,), threads=cfg.threads)
            recall = report.recall(20)
            if reference is None:
                reference = recall
            drop = (reference - recall) / reference if reference > 0 else 0.0
            rows.append({"model": model, "ratio": ratio, "recall@20": recall, "ndcg@20": report.ndcg(20), "relative_drop": drop})
            logger.info(f"Noise {ratio:.2f} {model}: recall@20={recall:.4f} drop={drop:.3f}")

    frame = pd.DataFrame(rows)
    if output_dir is not None:
        _write(frame, output_dir, "noise")
        pivot = frame.pivot(index="ratio", columns="model", values="relative_drop")
        charts.line_chart(
            Path(output_dir) / "noise.svg",
            pivot.index.tolist(),
            {model: pivot[model].tolist() for model in pivot.columns},
            xlabel="noise ratio",
            ylabel="relative Recall@20 drop",
        )
    return frame


def sparsity_report(
    state: EmbeddingState,
    splits: SplitSet,
    boundaries: Sequence[int] = USER_GROUP_BOUNDARIES,
    axis: str = "user",
    cutoffs: Sequence[int] = (20,),
    threads: int = 1,
    output_dir=None,
) -> pd.DataFrame:
    """
    Test metrics per training-degree group of users (or items).

    Groups without evaluable users are left out of the table.
    """
    groups = data_service.group_by_interactions(splits.train, boundaries, axis)
    rows = []
    for group, label in enumerate(groups.labels):
        members = groups.members(group)
        try:
            if axis == "user":
                report = evaluate(state, splits, "test", cutoffs, threads, users=members)
            else:
                report = evaluate(state, splits, "test", cutoffs, threads, items=members)
        except DataError:
            logger.warning(f"Sparsity group {label} ({axis}) has no evaluable users; omitted")
            continue
        row = {"axis": axis, "group": label, "size": int(members.size), "evaluated_users": len(report.users)}
        row.update(report.summary())
        rows.append(row)

    frame = pd.DataFrame(rows)
    if output_dir is not None and not frame.empty:
        stem = f"sparsity_{axis}"
        _write(frame, output_dir, stem)
        first = min(cutoffs)
        charts.bar_chart(
            Path(output_dir) / f"{stem}.svg",
            frame["group"].tolist(),
            {f"recall@{first}": frame[f"recall@{first}"].tolist(), f"ndcg@{first}": frame[f"ndcg@{first}"].tolist()},
            ylabel="metric",
        )
    return frame


def lambda1_sweep(
    cfg: TrainConfig,
    splits: SplitSet,
    grid: Sequence[float] = LAMBDA1_GRID,
    output_dir=None,
) -> pd.DataFrame:
    """
    One training run per lambda1 (same seed everywhere), sorted by lambda1 descending.
    """
    rows = []
    for lambda1 in sorted(set(grid), reverse=True):
        point = cfg.with_overrides(lambda1=lambda1)
        state, _ = trainer_service.fit(point, splits)
        graph = data_service.build_graph(splits.train)
        report = evaluate(state.main_embeddings(graph), splits, mode="test", threads=cfg.threads)
        rows.append({"lambda1": lambda1, "seed": point.seed, "best_epoch": state.best_epoch, **report.summary()})
        logger.info(f"lambda1={lambda1:g}: {report.summary()}")

    frame = pd.DataFrame(rows)
    if output_dir is not None:
        _write(frame, output_dir, "sweep")
        metrics = [c for c in frame.columns if c.startswith("recall@") or c.startswith("ndcg@")]
        charts.line_chart(
            Path(output_dir) / "sweep.svg",
            frame["lambda1"].tolist(),
            {name: frame[name].tolist() for name in metrics},
            xlabel="lambda1",
            ylabel="test metric",
            log_x=True,
        )
    return frame


def run_experiment(
    kind: str,
    cfg: TrainConfig,
    splits: SplitSet,
    output_dir,
    state: Optional[EmbeddingState] = None,
) -> pd.DataFrame:
    """Dispatch one experiment kind; sparsity trains the full model first when no state is given."""
    if kind == "noise":
        return noise_robustness(cfg, splits, output_dir=output_dir)
    if kind == "sweep":
        return lambda1_sweep(cfg, splits, output_dir=output_dir)
    if kind == "sparsity":
        if state is None:
            trained, _ = trainer_service.fit(cfg, splits)
            state = trained.main_embeddings(data_service.build_graph(splits.train))
        users = sparsity_report(state, splits, USER_GROUP_BOUNDARIES, "user", threads=cfg.threads, output_dir=output_dir)
        items = sparsity_report(state, splits, ITEM_GROUP_BOUNDARIES, "item", threads=cfg.threads, output_dir=output_dir)
        return pd.concat([users, items], ignore_index=True)
    raise UsageError(f"unknown experiment kind {kind!r}; expected one of {KINDS}")
