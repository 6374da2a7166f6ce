"""
Export service: final embeddings of the main encoder or of either
contrastive view, as CSV.
"""

import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from adagcl.diffmath import no_grad
from adagcl.exceptions import UsageError
from adagcl.models.interactions import InteractionGraph
from adagcl.services import data_service, denoise_service
from adagcl.services.encoder_service import EmbeddingState
from adagcl.services.trainer_service import TrainState, generated_graph

# Configure logging
logger = logging.getLogger(__name__)

WHICH = ("main", "view1", "view2")


def view_embeddings(state: TrainState, graph: InteractionGraph, which: str = "main") -> EmbeddingState:
    """
    Embeddings of the main encoder (main), the first contrastive view (view1)
    or the second one (view2); the denoised view uses deterministic gates.
    """
    if which not in WHICH:
        raise UsageError(f"unknown embedding source {which!r}; expected one of {WHICH}")
    if which == "main":
        return state.main_embeddings(graph)
    cfg = state.cfg
    if cfg.variant == "edge_drop" and cfg.lambda1 > 0:
        return state.encoder.frozen(data_service.drop_edges(graph, cfg.edge_drop_ratio, state.streams.edge_drop))
    if state.vgae is None:
        raise UsageError("this run has no view generators (lambda1 = 0)")
    if which == "view1":
        return state.encoder.frozen(generated_graph(state, state.vgae, graph))
    if state.vgae_second is not None:
        return state.encoder.frozen(generated_graph(state, state.vgae_second, graph))
    with no_grad():
        denoised, _, _ = denoise_service.denoise_forward(graph, state.denoiser, training=False)
    return denoised


def embedding_frame(embeddings: EmbeddingState, user_ids: Optional[Sequence[str]] = None,
                    item_ids: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """Users then items, one row each: entity_type, index, id, v0..v{d-1}."""
    matrix = embeddings.node_matrix().astype(np.float64)
    user_count = embeddings.final_user.shape[0]
    item_count = embeddings.final_item.shape[0]
    user_ids = list(user_ids) if user_ids else [str(u) for u in range(user_count)]
    item_ids = list(item_ids) if item_ids else [str(i) for i in range(item_count)]
    frame = pd.DataFrame(matrix, columns=[f"v{k}" for k in range(matrix.shape[1])])
    frame.insert(0, "id", user_ids + item_ids)
    frame.insert(0, "index", list(range(user_count)) + list(range(item_count)))
    frame.insert(0, "entity_type", ["user"] * user_count + ["item"] * item_count)
    return frame


def export_embeddings(state: TrainState, graph: InteractionGraph, which: str, path,
                      user_ids: Optional[Sequence[str]] = None, item_ids: Optional[Sequence[str]] = None) -> Path:
    """Write the chosen embeddings to ``path`` and return it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = embedding_frame(view_embeddings(state, graph, which), user_ids, item_ids)
    frame.to_csv(path, index=False)
    logger.info(f"Exported {len(frame)} {which} embeddings to {path}")
    return path
