"""
Interaction data models: tables, splits and bipartite graphs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from adagcl.diffmath.sparse import SparseMatrix
from adagcl.exceptions import DataError


@dataclass(frozen=True)
class InteractionTable:
    """
    Deduplicated implicit-feedback records over dense indices.

    Records are kept sorted by (user, item). ``user_ids``/``item_ids`` map
    dense indices back to raw identifiers for export.
    """

    user_count: int
    item_count: int
    users: np.ndarray
    items: np.ndarray
    user_ids: Tuple[str, ...] = ()
    item_ids: Tuple[str, ...] = ()

    @classmethod
    def from_pairs(
        cls,
        users,
        items,
        user_count: int,
        item_count: int,
        user_ids=None,
        item_ids=None,
    ) -> "InteractionTable":
        users = np.asarray(users, dtype=np.int64).reshape(-1)
        items = np.asarray(items, dtype=np.int64).reshape(-1)
        if users.size != items.size:
            raise DataError("user and item columns differ in length")
        if users.size and (users.min() < 0 or users.max() >= user_count):
            raise DataError(f"user index out of range for {user_count} users")
        if items.size and (items.min() < 0 or items.max() >= item_count):
            raise DataError(f"item index out of range for {item_count} items")
        keys = np.unique(users * item_count + items)
        return cls(
            user_count=int(user_count),
            item_count=int(item_count),
            users=keys // max(item_count, 1),
            items=keys % max(item_count, 1),
            user_ids=tuple(user_ids) if user_ids is not None else tuple(str(u) for u in range(user_count)),
            item_ids=tuple(item_ids) if item_ids is not None else tuple(str(i) for i in range(item_count)),
        )

    def __len__(self) -> int:
        return int(self.users.size)

    @property
    def records(self) -> List[Tuple[int, int]]:
        return list(zip(self.users.tolist(), self.items.tolist()))

    def edge_keys(self) -> np.ndarray:
        """Sorted int64 keys user * item_count + item, for set arithmetic."""
        return self.users * self.item_count + self.items

    def user_degrees(self) -> np.ndarray:
        return np.bincount(self.users, minlength=self.user_count)

    def item_degrees(self) -> np.ndarray:
        return np.bincount(self.items, minlength=self.item_count)

    def user_csr(self) -> sp.csr_matrix:
        """Binary user x item matrix of this table."""
        data = np.ones(self.users.size, dtype=np.float64)
        return sp.csr_matrix((data, (self.users, self.items)), shape=(self.user_count, self.item_count))

    def items_by_user(self) -> List[np.ndarray]:
        indptr = np.searchsorted(self.users, np.arange(self.user_count + 1))
        return [self.items[indptr[u]:indptr[u + 1]] for u in range(self.user_count)]

    def with_records(self, users, items) -> "InteractionTable":
        """Same index space, different records."""
        return InteractionTable.from_pairs(users, items, self.user_count, self.item_count, self.user_ids, self.item_ids)


@dataclass(frozen=True)
class SplitSet:
    """Disjoint train/validation/test tables over one index space."""

    train: InteractionTable
    validation: InteractionTable
    test: InteractionTable
    seed: int
    ratios: Tuple[float, float, float] = (0.7, 0.2, 0.1)
    mode: str = "per_user"

    @property
    def user_count(self) -> int:
        return self.train.user_count

    @property
    def item_count(self) -> int:
        return self.train.item_count

    def with_train(self, train: InteractionTable) -> "SplitSet":
        return SplitSet(train, self.validation, self.test, self.seed, self.ratios, self.mode)


@dataclass(frozen=True)
class InteractionGraph:
    """
    Bipartite user-item graph with raw and symmetrically normalized adjacency.

    Edges are stored in CSR order (by user, then item); ``edge_users``,
    ``edge_items`` and ``norm_values`` are aligned with that order.
    """

    user_count: int
    item_count: int
    adjacency: sp.csr_matrix
    adjacency_csc: sp.csc_matrix
    normalized: SparseMatrix
    user_degrees: np.ndarray
    item_degrees: np.ndarray
    edge_users: np.ndarray
    edge_items: np.ndarray
    norm_values: np.ndarray
    _keys: list = field(default_factory=list, repr=False, compare=False)

    @classmethod
    def from_edges(cls, users, items, user_count: int, item_count: int) -> "InteractionGraph":
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        keys = np.unique(users * item_count + items)
        users, items = keys // item_count, keys % item_count

        user_degrees = np.bincount(users, minlength=user_count).astype(np.int64)
        item_degrees = np.bincount(items, minlength=item_count).astype(np.int64)
        norm_values = 1.0 / np.sqrt(user_degrees[users].astype(np.float64) * item_degrees[items].astype(np.float64))

        adjacency = sp.csr_matrix(
            (np.ones(users.size, dtype=np.float64), (users, items)), shape=(user_count, item_count)
        )
        adjacency.sort_indices()
        normalized = SparseMatrix(
            sp.csr_matrix((norm_values, (users, items)), shape=(user_count, item_count))
        )
        return cls(
            user_count=int(user_count),
            item_count=int(item_count),
            adjacency=adjacency,
            adjacency_csc=adjacency.tocsc(),
            normalized=normalized,
            user_degrees=user_degrees,
            item_degrees=item_degrees,
            edge_users=users,
            edge_items=items,
            norm_values=norm_values,
        )

    @property
    def normalized_adjacency(self) -> sp.csr_matrix:
        return self.normalized.csr

    @property
    def num_edges(self) -> int:
        return int(self.edge_users.size)

    @property
    def num_nodes(self) -> int:
        return self.user_count + self.item_count

    @property
    def density(self) -> float:
        return self.num_edges / float(self.user_count * self.item_count)

    def edge_keys(self) -> np.ndarray:
        if not self._keys:
            self._keys.append(self.edge_users * self.item_count + self.edge_items)
        return self._keys[0]

    def has_edges(self, users, items) -> np.ndarray:
        """Vectorized membership test for (user, item) pairs."""
        keys = np.asarray(users, dtype=np.int64) * self.item_count + np.asarray(items, dtype=np.int64)
        return np.isin(keys, self.edge_keys())

    def subgraph(self, keep: np.ndarray) -> "InteractionGraph":
        """Graph over the edges selected by boolean mask ``keep`` (degrees recomputed)."""
        return InteractionGraph.from_edges(self.edge_users[keep], self.edge_items[keep], self.user_count, self.item_count)

    def to_table(self, template: Optional[InteractionTable] = None) -> InteractionTable:
        if template is not None:
            return template.with_records(self.edge_users, self.edge_items)
        return InteractionTable.from_pairs(self.edge_users, self.edge_items, self.user_count, self.item_count)


@dataclass(frozen=True)
class GroupAssignment:
    """Entities bucketed into half-open degree intervals."""

    axis: str
    boundaries: Tuple[int, ...]
    degrees: np.ndarray
    group_of: np.ndarray

    @property
    def labels(self) -> List[str]:
        edges = (0,) + tuple(self.boundaries)
        labels = [f"[{lo},{hi})" for lo, hi in zip(edges[:-1], edges[1:])]
        labels.append(f"[{edges[-1]},inf)")
        return labels

    def members(self, group: int) -> np.ndarray:
        return np.flatnonzero(self.group_of == group)

    def __len__(self) -> int:
        return len(self.boundaries) + 1
