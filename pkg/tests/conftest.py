"""
Shared fixtures: double precision, small tables and splits, an isolated output root.
"""

import numpy as np
import pytest

from adagcl.config import settings
from adagcl.diffmath import precision
from adagcl.models.interactions import InteractionTable, SplitSet
from adagcl.models.schemas import TrainConfig
from adagcl.services import data_service


@pytest.fixture
def double():
    """Run the test body with float64 Values."""
    with precision(np.float64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_table():
    users = [0, 0, 1, 1, 2, 2, 3, 3, 3, 4]
    items = [0, 1, 1, 2, 2, 3, 0, 3, 4, 4]
    return InteractionTable.from_pairs(users, items, 5, 5)


@pytest.fixture
def small_graph(small_table):
    return data_service.build_graph(small_table)


@pytest.fixture
def planted_table():
    return data_service.make_planted_blocks(users=60, items=80, communities=4, in_density=0.6, cross_density=0.01, seed=11)


@pytest.fixture
def planted_splits(planted_table) -> SplitSet:
    return data_service.split(planted_table, seed=5)


@pytest.fixture
def tiny_config() -> TrainConfig:
    return TrainConfig(dim=8, layers=2, batch_size=128, max_epochs=2, lr=0.01, seed=3, early_stop_cutoff=5)


@pytest.fixture
def output_root(tmp_path, monkeypatch):
    """Point run directories and the run registry at a temporary directory."""
    root = tmp_path / "runs"
    monkeypatch.setattr(settings, "output_root", root)
    monkeypatch.setattr(settings, "database_url", f"sqlite:///{tmp_path / 'registry.db'}")
    return root
