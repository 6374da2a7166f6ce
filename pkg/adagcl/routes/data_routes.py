"""
Data routes: the ``prepare`` command.
"""

import json
import logging
from pathlib import Path

from adagcl.config import SPLIT_RATIOS, settings
from adagcl.exceptions import DataError
from adagcl.services import data_service
from adagcl.services.run_service import TrackedRun

# Configure logging
logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("prepare", help="Load, filter and split an interaction file")
    parser.add_argument("--data", required=True, type=Path, help="Interaction file")
    parser.add_argument("--format", default="tsv", choices=data_service.FORMATS)
    parser.add_argument("--k-core", type=int, default=1, help="Minimum interactions per user and item")
    parser.add_argument("--split-seed", type=int, default=2023)
    parser.add_argument("--split-mode", default="per_user", choices=("per_user", "global"))
    parser.add_argument("--out", type=Path, default=None, help="Split directory (default: <output root>/splits/<file stem>)")
    parser.set_defaults(handler=cmd_prepare)


def _inputs(args) -> dict:
    return {
        "data_checksum": data_service.file_checksum(args.data),
        "format": args.format,
        "k_core": args.k_core,
        "split_seed": args.split_seed,
        "split_mode": args.split_mode,
    }


def _up_to_date(out: Path, inputs: dict) -> bool:
    manifest = out / "manifest.json"
    if not manifest.exists():
        return False
    try:
        recorded = json.loads(manifest.read_text(encoding="utf-8"))
        data_service.load_splits(out)
    except (OSError, json.JSONDecodeError, DataError):
        return False
    return all(recorded.get(key) == value for key, value in inputs.items())


def cmd_prepare(args) -> int:
    """Idempotent: unchanged inputs leave an existing split directory untouched."""
    if not args.data.is_file():
        raise DataError(f"data file not found: {args.data}")
    out = args.out or settings.output_root / "splits" / args.data.stem
    inputs = _inputs(args)
    if _up_to_date(out, inputs):
        logger.info(f"Splits in {out} are up-to-date")
        print(f"up-to-date: {out}")
        return 0

    with TrackedRun("prepare", out, config=inputs, seeds={"split": args.split_seed},
                    checksums={"data": inputs["data_checksum"]}, manifest_file="run.json") as run:
        table = data_service.load_interactions(args.data, args.format)
        if args.k_core > 1:
            table = data_service.k_core_filter(table, args.k_core)
        splits = data_service.split(table, SPLIT_RATIOS, seed=args.split_seed, mode=args.split_mode)
        density = data_service.build_graph(splits.train).density
        data_service.save_splits(splits, out, extra={**inputs, "train_density": density})
        run.updates = {"checksums": {"data": inputs["data_checksum"], "splits": data_service.splits_checksum(out)}}
        logger.info(f"Prepared {table.user_count} users, {table.item_count} items, {len(table)} interactions into {out}")
    print(f"prepared: {out} ({table.user_count} users, {table.item_count} items, train density {density:.4%})")
    return 0
