"""
Typed configuration and report schemas.
"""

import hashlib
import json
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from adagcl.config import HARD_CONCRETE_BETA, HARD_CONCRETE_GAMMA, HARD_CONCRETE_ZETA
from adagcl.exceptions import UsageError

VARIANTS = ("full", "edge_drop", "gen_gen", "no_task")


class TrainConfig(BaseModel):
    """Hyperparameters of one training run; field names are the config-file keys."""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    layers: int = Field(2, ge=0)
    dim: int = Field(32, ge=1)
    tau: float = Field(0.2, gt=0)
    lambda1: float = Field(0.1, ge=0)
    lambda2: float = Field(1e-5, ge=0)
    lr: float = Field(1e-3, gt=0)
    batch_size: int = Field(2048, ge=1)
    max_epochs: int = Field(100, ge=0)
    patience: int = Field(10, ge=1)
    seed: int = 2023
    variant: Literal["full", "edge_drop", "gen_gen", "no_task"] = "full"
    edge_drop_ratio: float = Field(0.1, ge=0, lt=1)
    lc_weight: float = Field(1e-2, ge=0)
    neg_ratio: int = Field(1, ge=1)
    eval_every: int = Field(1, ge=1)
    propagation: Literal["residual", "standard"] = "residual"
    beta: float = Field(HARD_CONCRETE_BETA, gt=0)
    gamma: float = Field(HARD_CONCRETE_GAMMA, lt=0)
    zeta: float = Field(HARD_CONCRETE_ZETA, gt=1)
    contrast_scope: Literal["batch", "full"] = "batch"
    generator_batch: Literal["reuse", "resample"] = "reuse"
    vgae_add_edges: bool = False
    precision: Literal["float32", "float64"] = "float32"
    early_stop_cutoff: int = Field(20, ge=1)
    threads: int = Field(1, ge=1)

    @property
    def uses_generators(self) -> bool:
        """Whether the VGAE/denoiser pair is constructed for this run."""
        return self.lambda1 > 0 and self.variant != "edge_drop"

    def config_hash(self) -> str:
        payload = json.dumps(self.model_dump(), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def with_overrides(self, **overrides) -> "TrainConfig":
        """Validated copy with some fields replaced."""
        return build_config({**self.model_dump(), **overrides})


def build_config(values: Dict[str, Any]) -> TrainConfig:
    """Construct a TrainConfig, mapping validation failures to UsageError."""
    try:
        return TrainConfig(**values)
    except ValidationError as e:
        raise UsageError(f"invalid configuration: {e}") from e


def parse_scalar(raw: str) -> Any:
    text = raw.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "'\"":
        return text[1:-1]
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def parse_config_text(text: str) -> Dict[str, Any]:
    """
    Parse flat ``key = value`` lines; ``#`` starts a comment.

    Raises:
        UsageError: on a line without ``=`` or a repeated key
    """
    values: Dict[str, Any] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise UsageError(f"config line {number}: expected key = value")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key in values:
            raise UsageError(f"config line {number}: duplicate key {key!r}")
        values[key] = parse_scalar(raw)
    return values


def load_config(path: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None) -> TrainConfig:
    """
    Read a config file (optional) and apply overrides on top.

    Args:
        path: Flat key = value file
        overrides: Values that win over the file

    Returns:
        Validated TrainConfig
    """
    values: Dict[str, Any] = {}
    if path is not None:
        try:
            values = parse_config_text(Path(path).read_text(encoding="utf-8"))
        except OSError as e:
            raise UsageError(f"cannot read config file {path}: {e}") from e
    values.update(overrides or {})
    return build_config(values)


def format_config(cfg: TrainConfig) -> str:
    """Inverse of parse_config_text for a TrainConfig."""
    lines = []
    for key, value in cfg.model_dump().items():
        if isinstance(value, str):
            lines.append(f'{key} = "{value}"')
        elif isinstance(value, bool):
            lines.append(f"{key} = {str(value).lower()}")
        else:
            lines.append(f"{key} = {value!r}")
    return "\n".join(lines) + "\n"


class CutoffMetrics(BaseModel):
    recall: float = Field(ge=0, le=1)
    ndcg: float = Field(ge=0, le=1)


class EvalReport(BaseModel):
    """Macro-averaged metrics per cutoff, with the per-user vectors behind them."""

    mode: Literal["validation", "test"]
    cutoffs: List[int]
    metrics: Dict[int, CutoffMetrics]
    users: List[int]
    per_user_recall: Dict[int, List[float]]
    per_user_ndcg: Dict[int, List[float]]
    config_hash: Optional[str] = None
    seed: Optional[int] = None
    epoch: Optional[int] = None

    @model_validator(mode="after")
    def _check_vectors(self):
        for cutoff in self.cutoffs:
            if cutoff not in self.metrics:
                raise ValueError(f"missing metrics for cutoff {cutoff}")
            if len(self.per_user_recall.get(cutoff, [])) != len(self.users):
                raise ValueError("per-user recall vector length differs from the user count")
            if len(self.per_user_ndcg.get(cutoff, [])) != len(self.users):
                raise ValueError("per-user NDCG vector length differs from the user count")
        return self

    def recall(self, cutoff: int) -> float:
        return self.metrics[cutoff].recall

    def ndcg(self, cutoff: int) -> float:
        return self.metrics[cutoff].ndcg

    def summary(self) -> Dict[str, float]:
        out: Dict[str, float] = {}
        for cutoff in self.cutoffs:
            out[f"recall@{cutoff}"] = self.recall(cutoff)
            out[f"ndcg@{cutoff}"] = self.ndcg(cutoff)
        return out


class RunManifest(BaseModel):
    """Provenance of one command invocation, written before work starts."""

    run_id: str
    command: str
    status: Literal["running", "succeeded", "failed", "interrupted"] = "running"
    config: Dict[str, Any] = Field(default_factory=dict)
    seeds: Dict[str, int] = Field(default_factory=dict)
    checksums: Dict[str, str] = Field(default_factory=dict)
    output_dir: str
    started_at: datetime = Field(default_factory=datetime.utcnow)
    finished_at: Optional[datetime] = None
    version: str
    message: Optional[str] = None
    manifest_file: str = "manifest.json"

    @field_validator("command")
    @classmethod
    def _known_command(cls, value: str) -> str:
        if value not in ("prepare", "train", "eval", "experiment", "export"):
            raise ValueError(f"unknown command {value!r}")
        return value

    def write(self, directory: Path) -> Path:
        path = Path(directory) / self.manifest_file
        path.write_text(self.model_dump_json(indent=2), encoding="utf-8")
        return path
