"""
Experiment routes: the ``experiment`` command.
"""

import logging
from pathlib import Path

from adagcl.models.schemas import format_config, load_config
from adagcl.services import data_service, experiment_service, run_service
from adagcl.services.run_service import TrackedRun

# Configure logging
logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("experiment", help="Noise robustness, sparsity groups or the lambda1 sweep")
    parser.add_argument("kind", choices=experiment_service.KINDS)
    parser.add_argument("--config", type=Path, default=None)
    parser.add_argument("--splits", required=True, type=Path)
    parser.add_argument("--out", type=Path, default=None, help="Output directory (default: timestamped under the output root)")
    parser.set_defaults(handler=cmd_experiment, accepts_overrides=True)


def cmd_experiment(args) -> int:
    cfg = load_config(args.config, args.overrides)
    splits = data_service.load_splits(args.splits)
    checksum = data_service.splits_checksum(args.splits)
    out = args.out or run_service.new_run_dir(f"experiment-{args.kind}")
    with TrackedRun("experiment", out, config={"kind": args.kind, **cfg.model_dump()},
                    seeds={"train": cfg.seed, "split": splits.seed}, checksums={"splits": checksum}):
        (out / "config.cfg").write_text(format_config(cfg), encoding="utf-8")
        frame = experiment_service.run_experiment(args.kind, cfg, splits, out)
    print(frame.to_string(index=False))
    return 0
