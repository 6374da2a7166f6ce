"""
Configuration settings for the adagcl package.
"""

from pathlib import Path

from dotenv import load_dotenv
from pydantic_settings import BaseSettings, SettingsConfigDict

# Load environment variables
load_dotenv()

# Base paths
BASE_DIR = Path(__file__).resolve().parent.parent


class Settings(BaseSettings):
    """Process-level settings read from ADAGCL_* environment variables."""

    model_config = SettingsConfigDict(env_prefix="ADAGCL_", extra="ignore")

    output_root: Path = BASE_DIR / "runs"
    log_level: str = "INFO"
    database_url: str | None = None
    threads: int = 1
    progress: bool = False

    def resolved_database_url(self) -> str:
        """Registry URL; defaults to a SQLite file under the output root."""
        if self.database_url:
            return self.database_url
        return f"sqlite:///{self.output_root / 'runs.db'}"


settings = Settings()

# Evaluation
DEFAULT_CUTOFFS = (20, 40)
SPLIT_RATIOS = (0.7, 0.2, 0.1)

# Experiment harness defaults
NOISE_RATIOS = (0.05, 0.10, 0.15, 0.20, 0.25)
NOISE_MODELS = ("full", "lightgcn", "edge_drop")
LAMBDA1_GRID = (1.0, 1e-1, 1e-2, 1e-3, 1e-4)
USER_GROUP_BOUNDARIES = (10, 20, 40)
ITEM_GROUP_BOUNDARIES = (5, 10, 20)

# Hard-concrete relaxation constants
HARD_CONCRETE_BETA = 2.0 / 3.0
HARD_CONCRETE_GAMMA = -0.1
HARD_CONCRETE_ZETA = 1.1

# Checkpoint framing
CHECKPOINT_MAGIC = b"ADAGCL\x00\x01"
