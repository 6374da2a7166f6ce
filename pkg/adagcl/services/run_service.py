"""
Run service: manifests on disk mirrored into the run registry.
"""

import json
import logging
import uuid
from datetime import datetime
from pathlib import Path
from typing import List, Optional

from sqlalchemy.orm import Session

from adagcl import __version__
from adagcl.config import settings
from adagcl.models.run import RunRecord, session_factory
from adagcl.models.schemas import RunManifest

# Configure logging
logger = logging.getLogger(__name__)


def new_run_dir(command: str, root: Optional[Path] = None) -> Path:
    """Timestamped directory under the output root."""
    root = Path(root) if root is not None else settings.output_root
    stamp = datetime.utcnow().strftime("%Y%m%d-%H%M%S")
    path = root / f"{command}-{stamp}-{uuid.uuid4().hex[:6]}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def get_all_runs(db: Session) -> List[RunRecord]:
    """
    Get all registered runs, newest first.

    Args:
        db: Database session

    Returns:
        List of RunRecord objects
    """
    return db.query(RunRecord).order_by(RunRecord.created_at.desc(), RunRecord.id.desc()).all()


def get_run(db: Session, run_id: str) -> Optional[RunRecord]:
    return db.query(RunRecord).filter(RunRecord.run_id == run_id).first()


def create_run(db: Optional[Session], command: str, output_dir: Path, config: Optional[dict] = None,
               seeds: Optional[dict] = None, checksums: Optional[dict] = None,
               manifest_file: str = "manifest.json") -> RunManifest:
    """
    Write manifest.json with status "running" and register the run.

    Args:
        db: Registry session, or None to skip the registry
        command: CLI sub-command name
        output_dir: Run directory
        config: Resolved configuration
        seeds: Named seeds
        checksums: Input checksums

    Returns:
        The written RunManifest
    """
    manifest = RunManifest(
        run_id=uuid.uuid4().hex,
        command=command,
        config=config or {},
        seeds=seeds or {},
        checksums=checksums or {},
        output_dir=str(output_dir),
        version=__version__,
        manifest_file=manifest_file,
    )
    manifest.write(output_dir)
    if db is not None:
        try:
            record = RunRecord(
                run_id=manifest.run_id,
                command=command,
                status=manifest.status,
                output_dir=manifest.output_dir,
                config_json=json.dumps(manifest.config, sort_keys=True),
                checksum=next(iter(manifest.checksums.values()), None),
                created_at=manifest.started_at,
            )
            db.add(record)
            db.commit()
        except Exception as e:
            logger.error(f"Error registering run: {str(e)}")
            db.rollback()
    return manifest


def finalize_run(db: Optional[Session], manifest: RunManifest, status: str, message: Optional[str] = None,
                 **updates) -> RunManifest:
    """
    Stamp the finish time and status on the manifest and its registry row.

    Extra keyword arguments replace manifest fields (e.g. a resolved config).
    """
    manifest = manifest.model_copy(update={"status": status, "message": message, "finished_at": datetime.utcnow(), **updates})
    manifest.write(Path(manifest.output_dir))
    if db is not None:
        try:
            record = get_run(db, manifest.run_id)
            if record is not None:
                record.status = status
                record.message = message
                record.finished_at = manifest.finished_at
                record.config_json = json.dumps(manifest.config, sort_keys=True, default=str)
                db.commit()
        except Exception as e:
            logger.error(f"Error finalizing run: {str(e)}")
            db.rollback()
    logger.info(f"Run {manifest.run_id} ({manifest.command}) finished with status {status}")
    return manifest


class TrackedRun:
    """
    Context manager around one command: manifest written on entry and
    finalized on exit with succeeded, failed or interrupted.
    """

    def __init__(self, command: str, output_dir: Path, config: Optional[dict] = None,
                 seeds: Optional[dict] = None, checksums: Optional[dict] = None, registry: bool = True,
                 manifest_file: str = "manifest.json"):
        self.command = command
        self.output_dir = Path(output_dir)
        self.config = config
        self.seeds = seeds
        self.checksums = checksums
        self.registry = registry
        self.manifest_file = manifest_file
        self.status = "succeeded"
        self.message: Optional[str] = None
        self.updates: dict = {}
        self.manifest: Optional[RunManifest] = None
        self._db = None

    def __enter__(self) -> "TrackedRun":
        self.output_dir.mkdir(parents=True, exist_ok=True)
        if self.registry:
            try:
                self._db = session_factory()()
            except Exception as e:
                logger.warning(f"Run registry unavailable, continuing without it: {str(e)}")
                self._db = None
        self.manifest = create_run(self._db, self.command, self.output_dir, self.config, self.seeds, self.checksums,
                                   self.manifest_file)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        if exc_type is None:
            status, message = self.status, self.message
        elif issubclass(exc_type, KeyboardInterrupt):
            status, message = "interrupted", "interrupted by user"
        else:
            status, message = "failed", str(exc)
        try:
            self.manifest = finalize_run(self._db, self.manifest, status, message, **self.updates)
        finally:
            if self._db is not None:
                self._db.close()
        return False
