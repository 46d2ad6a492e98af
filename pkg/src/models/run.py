"""
Resolved command-line run parameters
"""

import json
from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict, Field

RUN_CONFIG_FILE = "run_config.json"


class RunConfig(BaseModel):
    """Everything a subcommand ran with, echoed next to its outputs"""

    model_config = ConfigDict(frozen=True)

    command: str = Field(..., min_length=1)
    seed: int
    output: Path
    parameters: dict[str, Any] = Field(default_factory=dict)
    config_file: Path | None = None

    def to_json(self) -> str:
        # sorted and timestamp-free so reruns write identical bytes
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, indent=2) + "\n"

    def write(self) -> Path:
        target = self.output / RUN_CONFIG_FILE
        target.write_text(self.to_json(), encoding="utf-8")
        return target
