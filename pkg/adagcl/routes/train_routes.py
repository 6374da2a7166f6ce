"""
Training routes: the ``train`` and ``runs`` commands.
"""

import logging
from pathlib import Path

from adagcl.models.run import get_db
from adagcl.models.schemas import format_config, load_config
from adagcl.services import data_service, run_service, trainer_service
from adagcl.services.run_service import TrackedRun

# Configure logging
logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.bin"


def register(subparsers) -> None:
    parser = subparsers.add_parser(
        "train",
        help="Train a model; any TrainConfig field can be overridden with --<field> <value>",
    )
    parser.add_argument("--config", type=Path, default=None, help="Flat key = value config file")
    parser.add_argument("--splits", required=True, type=Path, help="Directory written by prepare")
    parser.add_argument("--out", type=Path, default=None, help="Run directory (default: timestamped under the output root)")
    parser.set_defaults(handler=cmd_train, accepts_overrides=True)

    runs = subparsers.add_parser("runs", help="List registered runs")
    runs.add_argument("--limit", type=int, default=20)
    runs.set_defaults(handler=cmd_runs)


def cmd_train(args) -> int:
    """Fit, then write the best checkpoint, history and resolved config."""
    cfg = load_config(args.config, args.overrides)
    splits = data_service.load_splits(args.splits)
    checksum = data_service.splits_checksum(args.splits)
    out = args.out or run_service.new_run_dir("train")
    checkpoint = out / CHECKPOINT_NAME

    with TrackedRun("train", out, config=cfg.model_dump(), seeds={"train": cfg.seed, "split": splits.seed},
                    checksums={"splits": checksum}):
        (out / "config.cfg").write_text(format_config(cfg), encoding="utf-8")
        state, history = trainer_service.fit(cfg, splits, output_dir=out, checkpoint_path=checkpoint, checksum=checksum)
        trainer_service.save_state(state, checkpoint, checksum)
        logger.info(f"Best validation recall@{cfg.early_stop_cutoff}={state.best_metric:.4f} at epoch {state.best_epoch}")
    print(f"trained: {out}")
    return 0


def cmd_runs(args) -> int:
    db_gen = get_db()
    db = next(db_gen)
    try:
        for record in run_service.get_all_runs(db)[: args.limit]:
            finished = record.finished_at.isoformat(timespec="seconds") if record.finished_at else "-"
            print(f"{record.run_id[:12]}  {record.command:<10}  {record.status:<11}  {finished}  {record.output_dir}")
    finally:
        db_gen.close()
    return 0
