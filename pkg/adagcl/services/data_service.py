"""
Data service: ingestion, filtering, splitting, graph construction and
controlled perturbations of interaction data.
"""

import csv
import hashlib
import json
import logging
import math
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from adagcl.config import SPLIT_RATIOS
from adagcl.exceptions import DataError, UsageError
from adagcl.models.interactions import GroupAssignment, InteractionGraph, InteractionTable, SplitSet

# Configure logging
logger = logging.getLogger(__name__)

FORMATS = ("tsv", "lastfm")
SPLIT_FILES = ("train.tsv", "validation.tsv", "test.tsv")
DENSE_GRAPH = 0.5
REJECTION_ROUNDS = 50


def load_interactions(path, format: str = "tsv") -> InteractionTable:
    """
    Read an interaction file and reindex raw IDs densely.

    Args:
        path: File path
        format: "tsv" (user<TAB>item[<TAB>ignored], # comments) or
            "lastfm" (user_artists.dat: same layout with one header row)

    Returns:
        InteractionTable with index maps in first-appearance order
    """
    if format not in FORMATS:
        raise UsageError(f"unknown format {format!r}; expected one of {FORMATS}")
    path = Path(path)
    try:
        frame = pd.read_csv(
            path,
            sep="\t",
            header=None,
            names=["user", "item", "weight"],
            usecols=["user", "item"],
            index_col=False,
            dtype=str,
            keep_default_na=False,
            skip_blank_lines=False,
            quoting=csv.QUOTE_NONE,
            encoding="utf-8",
        )
    except pd.errors.EmptyDataError:
        frame = pd.DataFrame(columns=["user", "item"], dtype=str)
    except (OSError, UnicodeDecodeError, pd.errors.ParserError) as e:
        raise DataError(f"cannot read {path}: {e}") from e

    # Row i of the frame is line i + 1 of the file
    users = frame["user"].fillna("").str.strip()
    items = frame["item"].fillna("").str.strip()
    content = ~((users == "") & (items == "")) & ~users.str.startswith("#")
    users, items = users[content], items[content]
    if format == "lastfm" and len(users):
        users, items = users.iloc[1:], items.iloc[1:]

    malformed = (users == "") | (items == "")
    if malformed.any():
        row = malformed.idxmax()
        raise DataError(f"{path}:{row + 1}: expected user_id<TAB>item_id, got {users[row]!r}, {items[row]!r}")
    if users.empty:
        raise DataError(f"{path}: no interactions found")

    user_codes, user_ids = pd.factorize(users)
    item_codes, item_ids = pd.factorize(items)
    table = InteractionTable.from_pairs(user_codes, item_codes, len(user_ids), len(item_ids), list(user_ids), list(item_ids))
    logger.info(f"Loaded {path.name}: {table.user_count} users, {table.item_count} items, {len(table)} interactions")
    return table


def k_core_filter(table: InteractionTable, k: int) -> InteractionTable:
    """
    Iteratively drop users and items with fewer than k interactions.

    Args:
        table: Source table
        k: Minimum degree on both sides

    Returns:
        Filtered table with re-compacted indices
    """
    if k < 1:
        raise UsageError("k must be at least 1")
    users, items = table.users, table.items
    while True:
        user_deg = np.bincount(users, minlength=table.user_count)
        item_deg = np.bincount(items, minlength=table.item_count)
        keep = (user_deg[users] >= k) & (item_deg[items] >= k)
        if keep.all():
            break
        users, items = users[keep], items[keep]
        if users.size == 0:
            break

    if users.size == 0:
        raise DataError(f"{k}-core filtering removed every interaction")

    kept_users, new_users = np.unique(users, return_inverse=True)
    kept_items, new_items = np.unique(items, return_inverse=True)
    filtered = InteractionTable.from_pairs(
        new_users,
        new_items,
        kept_users.size,
        kept_items.size,
        [table.user_ids[u] for u in kept_users],
        [table.item_ids[i] for i in kept_items],
    )
    logger.info(f"{k}-core: {len(table)} -> {len(filtered)} interactions, {filtered.user_count} users, {filtered.item_count} items")
    return filtered


def _part_sizes(n: int, ratios: Sequence[float]) -> Tuple[int, int, int]:
    """Floor the validation/test shares; remainders go to train."""
    n_val = int(math.floor(n * ratios[1] + 1e-9))
    n_test = int(math.floor(n * ratios[2] + 1e-9))
    return n - n_val - n_test, n_val, n_test


def split(
    table: InteractionTable,
    ratios: Sequence[float] = SPLIT_RATIOS,
    seed: int = 2023,
    mode: str = "per_user",
) -> SplitSet:
    """
    Split a table into train/validation/test.

    Args:
        table: Source table
        ratios: (train, validation, test) shares summing to 1
        seed: Seed of the split stream
        mode: "per_user" (default) or "global"

    Returns:
        SplitSet; every user with interactions keeps at least one training record
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise UsageError(f"ratios must be three non-negative shares summing to 1, got {ratios}")
    if mode not in ("per_user", "global"):
        raise UsageError(f"unknown split mode {mode!r}")

    rng = np.random.default_rng(seed)
    n = len(table)
    assignment = np.zeros(n, dtype=np.int8)

    if mode == "per_user":
        indptr = np.searchsorted(table.users, np.arange(table.user_count + 1))
        for user in range(table.user_count):
            start, stop = indptr[user], indptr[user + 1]
            count = stop - start
            if count == 0:
                continue
            order = start + rng.permutation(count)
            n_train, n_val, _ = _part_sizes(count, ratios)
            assignment[order[n_train:n_train + n_val]] = 1
            assignment[order[n_train + n_val:]] = 2
    else:
        order = rng.permutation(n)
        n_train, n_val, _ = _part_sizes(n, ratios)
        assignment[order[n_train:n_train + n_val]] = 1
        assignment[order[n_train + n_val:]] = 2
        has_train = np.zeros(table.user_count, dtype=bool)
        has_train[table.users[assignment == 0]] = True
        for position in order:
            user = table.users[position]
            if not has_train[user]:
                assignment[position] = 0
                has_train[user] = True

    parts = [table.with_records(table.users[assignment == k], table.items[assignment == k]) for k in range(3)]
    splits = SplitSet(parts[0], parts[1], parts[2], seed=seed, ratios=ratios, mode=mode)
    logger.info(f"Split ({mode}, seed={seed}): train={len(parts[0])}, validation={len(parts[1])}, test={len(parts[2])}")
    return splits


def build_graph(train: InteractionTable) -> InteractionGraph:
    """
    Build the bipartite graph with Abar[i, j] = 1 / sqrt(deg(i) * deg(j)).

    Args:
        train: Non-empty training table

    Returns:
        InteractionGraph
    """
    if len(train) == 0:
        raise DataError("cannot build a graph from an empty table")
    return InteractionGraph.from_edges(train.users, train.items, train.user_count, train.item_count)


def sample_non_edges(graph: InteractionGraph, count: int, rng: np.random.Generator, exclude=None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Uniformly sample ``count`` distinct (user, item) pairs absent from the graph.

    Rejection sampling against the edge set and ``exclude`` (extra int64 keys);
    dense graphs, or draws that stop making progress, switch to sampling from
    the enumerated complement.
    """
    total = graph.user_count * graph.item_count
    forbidden = graph.edge_keys() if exclude is None else np.union1d(graph.edge_keys(), np.asarray(exclude, dtype=np.int64))
    capacity = total - forbidden.size
    if count > capacity:
        raise DataError(f"graph too dense: need {count} non-edges, only {capacity} exist")

    if graph.density <= DENSE_GRAPH and count <= capacity // 2:
        chosen = np.empty(0, dtype=np.int64)
        for _ in range(REJECTION_ROUNDS):
            need = count - chosen.size
            if need == 0:
                return chosen // graph.item_count, chosen % graph.item_count
            draw = rng.integers(0, total, size=2 * need + 16, dtype=np.int64)
            draw = draw[~np.isin(draw, forbidden)]
            draw = draw[~np.isin(draw, chosen)]
            _, first = np.unique(draw, return_index=True)
            draw = draw[np.sort(first)]
            chosen = np.concatenate([chosen, draw[:need]])
        if chosen.size == count:
            return chosen // graph.item_count, chosen % graph.item_count
        logger.debug(f"Rejection sampling placed {chosen.size} of {count} non-edges; enumerating the complement")

    complement = np.setdiff1d(np.arange(total, dtype=np.int64), forbidden, assume_unique=True)
    chosen = rng.choice(complement, size=count, replace=False)
    return chosen // graph.item_count, chosen % graph.item_count


def inject_noise(graph: InteractionGraph, ratio: float, seed: int, exclude=None) -> InteractionGraph:
    """
    Replace round(ratio * |edges|) real edges with uniformly sampled fake ones.

    Args:
        graph: Clean graph
        ratio: Fraction in [0, 1]
        seed: Seed of the corruption stream
        exclude: int64 pair keys fake edges must avoid (held-out interactions)

    Returns:
        Corrupted graph with the same number of edges
    """
    if not 0.0 <= ratio <= 1.0:
        raise UsageError(f"noise ratio must lie in [0, 1], got {ratio}")
    count = int(math.floor(ratio * graph.num_edges + 0.5))
    if count == 0:
        return InteractionGraph.from_edges(graph.edge_users, graph.edge_items, graph.user_count, graph.item_count)

    rng = np.random.default_rng(seed)
    removed = rng.choice(graph.num_edges, size=count, replace=False)
    keep = np.ones(graph.num_edges, dtype=bool)
    keep[removed] = False
    fake_users, fake_items = sample_non_edges(graph, count, rng, exclude=exclude)
    users = np.concatenate([graph.edge_users[keep], fake_users])
    items = np.concatenate([graph.edge_items[keep], fake_items])
    logger.info(f"Injected noise: replaced {count} of {graph.num_edges} edges")
    return InteractionGraph.from_edges(users, items, graph.user_count, graph.item_count)


def drop_edges(graph: InteractionGraph, drop_ratio: float, rng: np.random.Generator) -> InteractionGraph:
    """Random edge-drop augmentation; each edge survives with probability 1 - drop_ratio."""
    if drop_ratio <= 0.0:
        return graph
    keep = rng.random(graph.num_edges) >= drop_ratio
    if not keep.any():
        logger.warning("Edge drop removed every edge; keeping the original graph")
        return graph
    return graph.subgraph(keep)


def group_by_interactions(table: InteractionTable, boundaries: Sequence[int], axis: str = "user") -> GroupAssignment:
    """
    Bucket users or items by training degree into half-open intervals.

    Args:
        table: Training table
        boundaries: Strictly ascending interval boundaries
        axis: "user" or "item"

    Returns:
        GroupAssignment
    """
    boundaries = tuple(int(b) for b in boundaries)
    if any(b >= c for b, c in zip(boundaries[:-1], boundaries[1:])):
        raise UsageError(f"boundaries must be strictly ascending, got {boundaries}")
    if axis not in ("user", "item"):
        raise UsageError(f"axis must be 'user' or 'item', got {axis!r}")
    degrees = table.user_degrees() if axis == "user" else table.item_degrees()
    group_of = np.searchsorted(np.asarray(boundaries, dtype=np.int64), degrees, side="right")
    return GroupAssignment(axis=axis, boundaries=boundaries, degrees=degrees, group_of=group_of)


def make_planted_blocks(
    users: int = 200,
    items: int = 200,
    communities: int = 4,
    in_density: float = 0.05,
    cross_density: float = 0.002,
    seed: int = 7,
) -> InteractionTable:
    """
    Synthesize a block-structured table: dense within communities, sparse across.

    Every user gets at least one in-community interaction.
    """
    rng = np.random.default_rng(seed)
    user_block = np.arange(users) % communities
    item_block = np.arange(items) % communities
    same = user_block[:, None] == item_block[None, :]
    probability = np.where(same, in_density, cross_density)
    mask = rng.random((users, items)) < probability
    for user in np.flatnonzero(~(mask & same).any(axis=1)):
        candidates = np.flatnonzero(item_block == user_block[user])
        mask[user, rng.choice(candidates)] = True
    rows, cols = np.nonzero(mask)
    return InteractionTable.from_pairs(rows, cols, users, items)


def file_checksum(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _splits_digest(directory: Path) -> str:
    digest = hashlib.sha256()
    for name in SPLIT_FILES:
        digest.update((directory / name).read_bytes())
    return digest.hexdigest()


def save_splits(splits: SplitSet, directory, extra: Optional[dict] = None) -> Path:
    """
    Persist a SplitSet as three TSV files (dense indices), index maps and a manifest.

    Returns:
        Path of manifest.json
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, part in zip(SPLIT_FILES, (splits.train, splits.validation, splits.test)):
        frame = pd.DataFrame({"user": part.users, "item": part.items})
        frame.to_csv(directory / name, sep="\t", header=False, index=False, lineterminator="\n")
    maps = {"users": list(splits.train.user_ids), "items": list(splits.train.item_ids)}
    (directory / "index_maps.json").write_text(json.dumps(maps), encoding="utf-8")

    manifest = {
        "seed": splits.seed,
        "ratios": list(splits.ratios),
        "mode": splits.mode,
        "counts": {
            "users": splits.user_count,
            "items": splits.item_count,
            "train": len(splits.train),
            "validation": len(splits.validation),
            "test": len(splits.test),
        },
        "checksum": _splits_digest(directory),
    }
    manifest.update(extra or {})
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return path


def _read_pairs(path: Path) -> pd.DataFrame:
    if path.stat().st_size == 0:
        return pd.DataFrame({"user": np.empty(0, dtype=np.int64), "item": np.empty(0, dtype=np.int64)})
    return pd.read_csv(path, sep="\t", header=None, names=["user", "item"], dtype=np.int64)


def load_splits(directory) -> SplitSet:
    """Read a SplitSet written by save_splits, verifying its checksum."""
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
        maps = json.loads((directory / "index_maps.json").read_text(encoding="utf-8"))
        checksum = _splits_digest(directory)
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read splits from {directory}: {e}") from e
    if checksum != manifest["checksum"]:
        raise DataError(f"split files in {directory} do not match their manifest checksum")

    user_count = manifest["counts"]["users"]
    item_count = manifest["counts"]["items"]
    parts = []
    for name in SPLIT_FILES:
        try:
            frame = _read_pairs(directory / name)
        except (ValueError, pd.errors.ParserError) as e:
            raise DataError(f"cannot parse {directory / name}: {e}") from e
        parts.append(
            InteractionTable.from_pairs(frame["user"].to_numpy(), frame["item"].to_numpy(), user_count, item_count, maps["users"], maps["items"])
        )
    return SplitSet(parts[0], parts[1], parts[2], seed=manifest["seed"], ratios=tuple(manifest["ratios"]), mode=manifest.get("mode", "per_user"))


def splits_checksum(directory) -> str:
    """Checksum recorded in a split directory's manifest."""
    manifest = json.loads((Path(directory) / "manifest.json").read_text(encoding="utf-8"))
    return manifest["checksum"]
