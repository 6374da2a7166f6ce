"""
Evaluation routes: the ``eval`` and ``export`` commands.
"""

import logging
from pathlib import Path

from adagcl.config import DEFAULT_CUTOFFS, settings
from adagcl.exceptions import DataError
from adagcl.services import data_service, eval_service, export_service, run_service, trainer_service
from adagcl.services.run_service import TrackedRun

# Configure logging
logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("eval", help="All-rank evaluation of a checkpoint")
    parser.add_argument("--checkpoint", required=True, type=Path)
    parser.add_argument("--splits", required=True, type=Path)
    parser.add_argument("--cutoffs", type=int, nargs="+", default=list(DEFAULT_CUTOFFS))
    parser.add_argument("--mode", default="test", choices=("validation", "test"))
    parser.add_argument("--threads", type=int, default=settings.threads)
    parser.add_argument("--out", type=Path, default=None)
    parser.set_defaults(handler=cmd_eval)

    export = subparsers.add_parser("export", help="Export final embeddings as CSV")
    export.add_argument("--checkpoint", required=True, type=Path)
    export.add_argument("--splits", required=True, type=Path)
    export.add_argument("--which", default="main", choices=export_service.WHICH)
    export.add_argument("--out", type=Path, default=None, help="CSV path (default: <run dir>/embeddings_<which>.csv)")
    export.set_defaults(handler=cmd_export)


def _load(args):
    state, meta = trainer_service.load_state(args.checkpoint)
    splits = data_service.load_splits(args.splits)
    checksum = data_service.splits_checksum(args.splits)
    if meta.get("split_checksum") and meta["split_checksum"] != checksum:
        logger.warning("Checkpoint was trained on different splits than the ones being evaluated")
    if (splits.user_count, splits.item_count) != (state.user_count, state.item_count):
        raise DataError("checkpoint dimensions do not match the splits")
    return state, splits, checksum


def cmd_eval(args) -> int:
    state, splits, checksum = _load(args)
    out = args.out or run_service.new_run_dir("eval")
    with TrackedRun("eval", out, config=state.cfg.model_dump(), seeds={"train": state.cfg.seed},
                    checksums={"splits": checksum}):
        graph = data_service.build_graph(splits.train)
        report = eval_service.evaluate(
            state.main_embeddings(graph),
            splits,
            mode=args.mode,
            cutoffs=args.cutoffs,
            threads=args.threads,
            epoch=state.epoch,
            config_hash=state.cfg.config_hash(),
            seed=state.cfg.seed,
        )
        eval_service.write_report(report, out)
    print(" ".join(f"{key}={value:.4f}" for key, value in report.summary().items()))
    return 0


def cmd_export(args) -> int:
    state, splits, checksum = _load(args)
    out = args.out or run_service.new_run_dir("export") / f"embeddings_{args.which}.csv"
    with TrackedRun("export", out.parent, config=state.cfg.model_dump(), seeds={"train": state.cfg.seed},
                    checksums={"splits": checksum}):
        graph = data_service.build_graph(splits.train)
        export_service.export_embeddings(state, graph, args.which, out, splits.train.user_ids, splits.train.item_ids)
    print(f"exported: {out}")
    return 0
