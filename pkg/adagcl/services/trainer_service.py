"""
Trainer service: triple sampling, the bilevel upper/lower training step,
the epoch loop with early stopping, training history and checkpoints.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

from adagcl.config import settings
from adagcl.diffmath import Adam, load_checkpoint, no_grad, ops, precision, save_checkpoint
from adagcl.exceptions import DataError, NumericalError
from adagcl.models.interactions import InteractionGraph, InteractionTable, SplitSet
from adagcl.models.schemas import TrainConfig, build_config
from adagcl.services import data_service, denoise_service, generative_service
from adagcl.services.denoise_service import DenoiseGenerator
from adagcl.services.encoder_service import EmbeddingState, GraphEncoder
from adagcl.services.eval_service import evaluate
from adagcl.services.generative_service import VgaeGenerator
from adagcl.services.objective_service import ContrastiveConfig, LossBreakdown, TripletBatch, lower_loss, upper_loss
from adagcl.utils.rng import RngStreams

# Configure logging
logger = logging.getLogger(__name__)

MAX_NEGATIVE_ROUNDS = 100


def _attach_negatives(train: InteractionTable, users: np.ndarray, positives: np.ndarray, rng: np.random.Generator) -> TripletBatch:
    """Pair each (u, i) with an item j drawn uniformly until (u, j) is unobserved."""
    degrees = train.user_degrees()
    saturated = degrees[users] >= train.item_count
    if saturated.any():
        logger.warning(f"Skipping {int(saturated.sum())} triples of users who interacted with every item")
        users, positives = users[~saturated], positives[~saturated]
    keys = train.edge_keys()
    negatives = rng.integers(0, train.item_count, size=users.size, dtype=np.int64)
    pending = np.isin(users * train.item_count + negatives, keys)
    rounds = 0
    while pending.any():
        rounds += 1
        if rounds > MAX_NEGATIVE_ROUNDS:
            raise DataError("negative sampling did not converge")
        negatives[pending] = rng.integers(0, train.item_count, size=int(pending.sum()), dtype=np.int64)
        pending = np.isin(users * train.item_count + negatives, keys)
    return TripletBatch(users.astype(np.int64), positives.astype(np.int64), negatives)


def sample_triplets(train: InteractionTable, batch_size: int, rng: np.random.Generator) -> TripletBatch:
    """
    Draw ``batch_size`` observed interactions uniformly (with replacement) and
    attach one unobserved item per interaction.

    Args:
        train: Training table
        batch_size: Number of triples
        rng: Batch stream

    Returns:
        TripletBatch (smaller when saturated users are skipped)
    """
    if len(train) == 0:
        raise DataError("cannot sample triples from an empty table")
    picks = rng.integers(0, len(train), size=batch_size)
    return _attach_negatives(train, train.users[picks], train.items[picks], rng)


def epoch_batches(train: InteractionTable, batch_size: int, rng: np.random.Generator) -> Iterator[TripletBatch]:
    """One shuffled pass over every training interaction."""
    order = rng.permutation(len(train))
    for start in range(0, order.size, batch_size):
        picks = order[start:start + batch_size]
        batch = _attach_negatives(train, train.users[picks], train.items[picks], rng)
        if len(batch):
            yield batch


@dataclass
class TrainState:
    """Parameters, optimizers and streams of one run."""

    cfg: TrainConfig
    user_count: int
    item_count: int
    encoder: GraphEncoder
    streams: RngStreams
    vgae: Optional[VgaeGenerator] = None
    vgae_second: Optional[VgaeGenerator] = None
    denoiser: Optional[DenoiseGenerator] = None
    optimizers: Dict[str, Adam] = field(default_factory=dict)
    epoch: int = 0
    best_metric: float = -math.inf
    best_epoch: int = 0

    def modules(self) -> Dict[str, object]:
        found = {"main": self.encoder, "vgae": self.vgae, "vgae2": self.vgae_second, "denoiser": self.denoiser}
        return {name: module for name, module in found.items() if module is not None}

    def generator_modules(self) -> List[object]:
        return [m for name, m in self.modules().items() if name != "main"]

    def snapshot(self) -> Dict[str, np.ndarray]:
        arrays: Dict[str, np.ndarray] = {}
        for name, module in self.modules().items():
            arrays.update({f"{name}.{key}": value for key, value in module.snapshot().items()})
        return arrays

    def restore(self, arrays: Dict[str, np.ndarray]) -> None:
        for name, module in self.modules().items():
            prefix = f"{name}."
            module.restore({key[len(prefix):]: value for key, value in arrays.items() if key.startswith(prefix)})

    def main_embeddings(self, graph: InteractionGraph) -> EmbeddingState:
        return self.encoder.frozen(graph)


def init_state(cfg: TrainConfig, user_count: int, item_count: int) -> TrainState:
    """
    Build the encoder and, when the configuration needs them, the generators.

    Generators are never constructed with lambda1 == 0 or the edge-drop variant.
    """
    streams = RngStreams(cfg.seed)
    init = streams.init
    encoder = GraphEncoder(user_count, item_count, cfg.dim, cfg.layers, init, cfg.propagation)
    state = TrainState(cfg=cfg, user_count=user_count, item_count=item_count, encoder=encoder, streams=streams)
    state.optimizers["main"] = Adam(encoder.parameters(), lr=cfg.lr)
    if cfg.uses_generators:
        state.vgae = VgaeGenerator(user_count, item_count, cfg.dim, cfg.layers, init, cfg.propagation)
        state.optimizers["vgae"] = Adam(state.vgae.parameters(), lr=cfg.lr)
        if cfg.variant == "gen_gen":
            state.vgae_second = VgaeGenerator(user_count, item_count, cfg.dim, cfg.layers, init, cfg.propagation)
            state.optimizers["vgae2"] = Adam(state.vgae_second.parameters(), lr=cfg.lr)
        else:
            state.denoiser = DenoiseGenerator(
                user_count, item_count, cfg.dim, cfg.layers, init, cfg.beta, cfg.gamma, cfg.zeta, cfg.propagation
            )
            state.optimizers["denoiser"] = Adam(state.denoiser.parameters(), lr=cfg.lr)
    return state


def generated_graph(state: TrainState, generator: VgaeGenerator, graph: InteractionGraph) -> InteractionGraph:
    """Sample a view from a generator without recording the tape."""
    streams = state.streams
    with no_grad():
        forward = generative_service.generator_forward(graph, generator, streams.vgae_noise)
        probs = generative_service.edge_probabilities(forward, generator, graph)
        candidates = None
        if state.cfg.vgae_add_edges:
            count = max(1, graph.num_edges // 10)
            cand_users, cand_items = data_service.sample_non_edges(graph, count, streams.negatives)
            _, cand_probs = generative_service.decode_edges(
                forward.latent, cand_users, cand_items + graph.user_count, generator.decoder, graph.user_count
            )
            candidates = (cand_users, cand_items, cand_probs.data)
    return generative_service.generate_view(graph, probs, streams.view_sampling, candidates)


def _views(state: TrainState, graph: InteractionGraph, metrics: Dict[str, float]):
    """Contrastive views for the upper step (generator outputs carry no tape)."""
    cfg = state.cfg
    if cfg.lambda1 == 0:
        return None, None
    if cfg.variant == "edge_drop":
        first = data_service.drop_edges(graph, cfg.edge_drop_ratio, state.streams.edge_drop)
        second = data_service.drop_edges(graph, cfg.edge_drop_ratio, state.streams.edge_drop)
        metrics["view1_kept"] = first.num_edges / graph.num_edges
        metrics["view2_kept"] = second.num_edges / graph.num_edges
        return state.encoder(first), state.encoder(second)

    generated = generated_graph(state, state.vgae, graph)
    metrics["view1_kept"] = generated.num_edges / graph.num_edges
    view1 = state.encoder(generated)
    if cfg.variant == "gen_gen":
        second = generated_graph(state, state.vgae_second, graph)
        metrics["view2_kept"] = second.num_edges / graph.num_edges
        return view1, state.encoder(second)
    with no_grad():
        denoised, _, gates = denoise_service.denoise_forward(graph, state.denoiser, state.streams.gate_noise, training=True)
    for layer, value in enumerate(gates.mean_gates(), start=1):
        metrics[f"gate_layer{layer}"] = value
    return view1, denoised.detach()


def _vgae_part(state: TrainState, generator: VgaeGenerator, graph: InteractionGraph, batch: TripletBatch) -> LossBreakdown:
    cfg = state.cfg
    forward = generative_service.generator_forward(graph, generator, state.streams.vgae_noise)
    negatives = data_service.sample_non_edges(graph, cfg.neg_ratio * len(batch), state.streams.negatives)
    return generative_service.vgae_loss(
        forward,
        generator,
        graph,
        negatives,
        batch,
        cfg.lambda2,
        use_bpr=cfg.variant != "no_task",
        positives=(batch.users, batch.positives),
    )


def train_step(state: TrainState, graph: InteractionGraph, batch: TripletBatch, train: Optional[InteractionTable] = None) -> Dict[str, float]:
    """
    One upper step on the main encoder followed by one lower step on the generators.

    Args:
        state: Run state (updated in place)
        graph: Training graph
        batch: BPR triples of this step
        train: Training table, needed when generator batches are resampled

    Returns:
        Loss components and view diagnostics of the step

    Raises:
        NumericalError: on a non-finite loss
    """
    cfg = state.cfg
    ccfg = ContrastiveConfig(tau=cfg.tau, lambda1=cfg.lambda1, lambda2=cfg.lambda2, scope=cfg.contrast_scope)
    metrics: Dict[str, float] = {}

    main = state.encoder(graph)
    view1, view2 = _views(state, graph, metrics)
    upper = upper_loss(main, view1, view2, batch, ccfg, state.encoder.parameters())
    upper.total.backward()
    state.optimizers["main"].step()
    metrics.update(upper.as_dict("upper_"))

    generators = state.generator_modules()
    if not generators:
        return metrics

    gen_batch = batch
    if cfg.generator_batch == "resample" and train is not None:
        gen_batch = sample_triplets(train, len(batch), state.streams.batch)

    gen = _vgae_part(state, state.vgae, graph, gen_batch)
    if state.vgae_second is not None:
        second = _vgae_part(state, state.vgae_second, graph, gen_batch)
        lower = lower_loss(gen, None)
        lower = LossBreakdown(ops.add(lower.total, second.total), {**lower.parts, **second.as_dict("gen2_")})
    else:
        denoised, l_c, _ = denoise_service.denoise_forward(graph, state.denoiser, state.streams.gate_noise, training=True)
        den = denoise_service.denoise_loss(
            denoised,
            l_c,
            gen_batch,
            state.denoiser.parameters(),
            cfg.lambda2,
            cfg.lc_weight,
            use_bpr=cfg.variant != "no_task",
        )
        lower = lower_loss(gen, den)
    lower.total.backward()
    for name in ("vgae", "vgae2", "denoiser"):
        if name in state.optimizers:
            state.optimizers[name].step()
    metrics.update(lower.as_dict("lower_"))
    return metrics


@dataclass
class TrainHistory:
    """Per-epoch rows of averaged step metrics and validation results."""

    rows: List[Dict[str, float]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def append(self, row: Dict[str, float]) -> None:
        self.rows.append(row)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)

    def metric(self, name: str) -> List[float]:
        return [row[name] for row in self.rows if name in row and not pd.isna(row[name])]

    def write(self, directory, summary: Optional[dict] = None) -> None:
        """history.csv, gates.csv (when gate diagnostics exist) and summary.json."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        frame = self.to_frame()
        frame.to_csv(directory / "history.csv", index=False)
        gate_columns = [c for c in frame.columns if c.startswith("gate_") or c.endswith("_kept")]
        if gate_columns:
            frame[["epoch"] + gate_columns].to_csv(directory / "gates.csv", index=False)
        (directory / "summary.json").write_text(json.dumps(summary or {}, indent=2, sort_keys=True, default=str), encoding="utf-8")


def dump_diagnostics(state: TrainState, batch: TripletBatch, error: Exception, directory) -> Path:
    """Write the failing batch, the parameter norms and the error message."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    norms = {name: float(np.linalg.norm(value)) for name, value in state.snapshot().items()}
    payload = {"epoch": state.epoch, "error": str(error), "parameter_norms": norms, "batch": batch.triples[:1000]}
    path = directory / "diagnostics.json"
    path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    return path


def save_state(state: TrainState, path, checksum: Optional[str] = None) -> Path:
    """Checkpoint every parameter set plus the config, counters and random stream states."""
    meta = {
        "config": state.cfg.model_dump(),
        "user_count": state.user_count,
        "item_count": state.item_count,
        "epoch": state.epoch,
        "best_metric": state.best_metric if math.isfinite(state.best_metric) else None,
        "best_epoch": state.best_epoch,
        "split_checksum": checksum,
        "rng": state.streams.state(),
    }
    return save_checkpoint(path, state.snapshot(), step=state.epoch, meta=meta)


def load_state(path) -> tuple:
    """
    Rebuild a TrainState from a checkpoint.

    Returns:
        Tuple of (TrainState, checkpoint metadata)
    """
    arrays, step, meta = load_checkpoint(path)
    cfg = build_config(meta["config"])
    with precision(cfg.precision):
        state = init_state(cfg, meta["user_count"], meta["item_count"])
    try:
        state.restore(arrays)
    except KeyError as e:
        raise DataError(f"checkpoint {path} lacks parameter {e}") from e
    state.epoch = step
    state.best_metric = meta.get("best_metric") if meta.get("best_metric") is not None else -math.inf
    state.best_epoch = meta.get("best_epoch", 0)
    state.streams.restore(meta.get("rng", {}))
    return state, meta


def _average(rows: List[Dict[str, float]]) -> Dict[str, float]:
    keys = sorted({key for row in rows for key in row})
    return {key: float(np.mean([row[key] for row in rows if key in row])) for key in keys}


def fit(
    cfg: TrainConfig,
    splits: SplitSet,
    output_dir=None,
    graph: Optional[InteractionGraph] = None,
    checkpoint_path=None,
    checksum: Optional[str] = None,
) -> tuple:
    """
    Train with early stopping on validation Recall@early_stop_cutoff.

    Args:
        cfg: Training configuration
        splits: Train/validation/test tables
        output_dir: Where history and diagnostics are written (optional)
        graph: Training graph override (noise experiments); defaults to the train split's graph
        checkpoint_path: Flushed on interruption when given
        checksum: Split checksum recorded in checkpoints

    Returns:
        Tuple of (TrainState restored to its best evaluation, TrainHistory)
    """
    with precision(cfg.precision):
        graph = graph if graph is not None else data_service.build_graph(splits.train)
        train = graph.to_table(splits.train)
        state = init_state(cfg, splits.user_count, splits.item_count)
        history = TrainHistory()
        best_arrays = None
        stale = 0
        logger.info(
            f"Training variant={cfg.variant} lambda1={cfg.lambda1} on {graph.num_edges} edges "
            f"({graph.user_count} users, {graph.item_count} items)"
        )
        batch = TripletBatch.empty()
        try:
            for epoch in range(1, cfg.max_epochs + 1):
                state.epoch = epoch
                step_rows = []
                batches = epoch_batches(train, cfg.batch_size, state.streams.batch)
                for batch in tqdm(batches, desc=f"epoch {epoch}", leave=False, disable=not settings.progress):
                    step_rows.append(train_step(state, graph, batch, train))
                row = {"epoch": epoch, **_average(step_rows)}

                if epoch % cfg.eval_every == 0:
                    report = evaluate(
                        state.main_embeddings(graph),
                        splits,
                        mode="validation",
                        cutoffs=sorted({cfg.early_stop_cutoff, 20}),
                        threads=cfg.threads,
                        epoch=epoch,
                    )
                    metric = report.recall(cfg.early_stop_cutoff)
                    row.update({f"val_{key}": value for key, value in report.summary().items()})
                    if metric > state.best_metric:
                        state.best_metric, state.best_epoch = metric, epoch
                        best_arrays = state.snapshot()
                        stale = 0
                    else:
                        stale += 1
                history.append(row)
                logger.info(f"Epoch {epoch}: loss={row.get('upper_total', float('nan')):.4f} best@{state.best_epoch}={state.best_metric:.4f}")
                if stale >= cfg.patience:
                    logger.info(f"Early stopping after {stale} evaluations without improvement")
                    break
        except NumericalError as e:
            logger.error(f"Numerical failure in epoch {state.epoch}: {e}")
            if output_dir is not None:
                dump_diagnostics(state, batch, e, output_dir)
            raise
        except KeyboardInterrupt:
            if checkpoint_path is not None:
                save_state(state, checkpoint_path, checksum)
                logger.warning(f"Interrupted; checkpoint flushed to {checkpoint_path}")
            raise

        if best_arrays is not None:
            state.restore(best_arrays)
            state.epoch = state.best_epoch
        if output_dir is not None:
            summary = {
                "config": cfg.model_dump(),
                "best_epoch": state.best_epoch,
                "best_metric": state.best_metric if math.isfinite(state.best_metric) else None,
                "epochs_run": len(history),
            }
            history.write(output_dir, summary)
    return state, history
