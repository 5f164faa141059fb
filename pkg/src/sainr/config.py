"""
SA-INR — Configuration Settings

Runtime knobs only. The experiment protocol itself lives in the
ExperimentManifest (see models.py) so that settings never change artifact bytes.
"""
from pathlib import Path

import torch
from dotenv import load_dotenv
from pydantic_settings import BaseSettings, SettingsConfigDict

from . import __version__

# Load .env from project root
PROJECT_ROOT = Path(__file__).parent.parent.parent
load_dotenv(PROJECT_ROOT / ".env")


class Settings(BaseSettings):
    """Application settings loaded from SAINR_* environment variables."""

    model_config = SettingsConfigDict(env_prefix="SAINR_", env_file=".env", extra="ignore")

    log_level: str = "INFO"

    # Torch intra-op threads; pinned so float reductions repeat bitwise
    num_threads: int = 1
    deterministic: bool = True

    # Array headers declaring more elements than this are rejected on read
    max_array_elements: int = 2**28

    # Written into manifests when the caller does not pass one
    version_tag: str = __version__

    def apply_torch(self) -> None:
        """Push the thread and determinism knobs into torch."""
        torch.set_num_threads(self.num_threads)
        torch.use_deterministic_algorithms(self.deterministic)


settings = Settings()
