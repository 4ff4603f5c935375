"""Environment-driven settings and the per-run TaskConfig."""

import os
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import dotenv_values, load_dotenv
from pydantic import BaseModel, Field, field_validator

load_dotenv()

# Set these in .env or the environment before using the live transport:
# export GOOGLE_API_KEY="..."
MODEL = os.getenv("TASKGUARD_MODEL", "gemini-2.5-flash")
LLM_BASE_URL = os.getenv("TASKGUARD_LLM_BASE_URL")
API_KEY_ENV = "GOOGLE_API_KEY"
ADAPTER_URL = os.getenv("TASKGUARD_ADAPTER_URL", "http://127.0.0.1:8080/predict")

MEMORY_FILE = os.getenv("TASKGUARD_MEMORY_FILE", str(Path.home() / ".taskguard" / "memory.json"))

MAX_REPLANS = int(os.getenv("TASKGUARD_MAX_REPLANS", "3"))
STEP_CAP = int(os.getenv("TASKGUARD_STEP_CAP", "25"))
SCROLL_CAP = 20

RATE_LIMIT_RPS = float(os.getenv("TASKGUARD_RATE_LIMIT_RPS", "1.0"))
MAX_IN_FLIGHT = int(os.getenv("TASKGUARD_MAX_IN_FLIGHT", "2"))
LOG_LEVEL = os.getenv("TASKGUARD_LOG_LEVEL", "INFO")

SCENARIO_DIR = Path(__file__).parent / "scenarios"


class TaskConfig(BaseModel):
    """Switches for one task run."""

    feasibility_enabled: bool = Field(False, description="Gate every command with the feasibility predictor")
    completeness_enabled: bool = Field(False, description="Verify every executed command")
    max_replans: int = Field(MAX_REPLANS, description="Replanning attempts allowed per step")
    step_cap: int = Field(STEP_CAP, description="Global cap on planned steps")
    blind_mode: bool = Field(False, description="Click a fallback element when grounding fails")
    after_only_completeness: bool = Field(False, description="Completeness verifier ignores the before-screen")
    feasibility_fail_open: bool = Field(False, description="Treat an unavailable feasibility guard as feasible")
    completeness_fail_open: bool = Field(True, description="Treat an unavailable completeness guard as complete")
    protector_enabled: bool = Field(True, description="Swap user secrets for local placeholders before planning")

    @field_validator("max_replans")
    @classmethod
    def _non_negative(cls, value: int) -> int:
        if value < 0:
            raise ValueError("max_replans must be >= 0")
        return value

    @field_validator("step_cap")
    @classmethod
    def _positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError("step_cap must be >= 1")
        return value

    @property
    def label(self) -> str:
        """Configuration name used for scripted plan tracks and reports."""
        if self.feasibility_enabled and self.completeness_enabled:
            return "fea_com"
        if self.feasibility_enabled:
            return "fea"
        if self.completeness_enabled:
            return "com"
        return "baseline"


BASELINE = TaskConfig(blind_mode=True)
WITH_FEASIBILITY = TaskConfig(feasibility_enabled=True)
WITH_FEASIBILITY_AND_COMPLETENESS = TaskConfig(feasibility_enabled=True, completeness_enabled=True)

ABLATION_CONFIGS = {
    "baseline": BASELINE,
    "fea": WITH_FEASIBILITY,
    "fea_com": WITH_FEASIBILITY_AND_COMPLETENESS,
}


def read_config_file(path: Optional[str]) -> Dict[str, Any]:
    """Read a key=value file; keys are normalised to flag names (dashes to underscores)."""
    if not path:
        return {}
    values = dotenv_values(path)
    return {key.strip().lower().replace("-", "_"): value for key, value in values.items() if value is not None}
