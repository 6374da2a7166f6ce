"""
Baseline service: plain LightGCN and the random edge-drop contrastive variant,
both trained through the same trainer and evaluation path as the full model.
"""

import logging

from adagcl.models.interactions import SplitSet
from adagcl.models.schemas import TrainConfig
from adagcl.services import trainer_service

# Configure logging
logger = logging.getLogger(__name__)


def lightgcn_config(cfg: TrainConfig) -> TrainConfig:
    """No contrastive term, hence no generators."""
    return cfg.with_overrides(lambda1=0.0, variant="full")


def edge_drop_config(cfg: TrainConfig) -> TrainConfig:
    return cfg.with_overrides(variant="edge_drop")


def train_lightgcn(cfg: TrainConfig, splits: SplitSet, **kwargs):
    """
    Train plain LightGCN (BPR plus weight decay only).

    Returns:
        Tuple of (TrainState, TrainHistory)
    """
    logger.info("Training LightGCN baseline")
    return trainer_service.fit(lightgcn_config(cfg), splits, **kwargs)


def train_edge_drop(cfg: TrainConfig, splits: SplitSet, **kwargs):
    """
    Train the contrastive model whose two views are independent random
    edge-drop subgraphs.

    Returns:
        Tuple of (TrainState, TrainHistory)
    """
    logger.info(f"Training edge-drop baseline (drop ratio {cfg.edge_drop_ratio})")
    return trainer_service.fit(edge_drop_config(cfg), splits, **kwargs)
