import json
import os
from typing import List, Literal, Optional

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from calib_config import MODE_PROFILES, CalibSettings
from harness.errors import ManifestError
from simulator.faults import FaultSpec
from simulator.scenarios import SCENARIOS


class RunManifest(BaseModel):
    """What a Monte-Carlo batch runs: scenario, estimator mode, seeds and where results go."""
    scenario: str = "default"
    config: Optional[str] = None                  # path to a CalibSettings JSON file
    mode: Literal["tc-ar", "tc-war", "le-fixed", "le-online"] = "tc-ar"
    seeds: List[int] = Field(default_factory=lambda: list(range(40)))
    output_dir: str = "__runs__/montecarlo"
    faults: FaultSpec = FaultSpec()
    dead_reckoning: bool = False                  # also score the outage with final vs initial calibration
    outage_start: float = 100.0                   # s
    dr_scenario: Optional[str] = None             # scenario for the outage, defaults to ``scenario``

    @field_validator("mode")
    @classmethod
    def _known_mode(cls, value: str) -> str:
        if value not in MODE_PROFILES:
            raise ValueError(f"unknown mode {value}")
        return value

    @field_validator("scenario", "dr_scenario")
    @classmethod
    def _known_scenario(cls, value: Optional[str]) -> Optional[str]:
        if value is not None and value not in SCENARIOS:
            raise ValueError(f"unknown scenario {value}, expected one of {sorted(SCENARIOS)}")
        return value

    @model_validator(mode="after")
    def _enough_seeds(self):
        if len(self.seeds) < 2:
            raise ValueError("a Monte-Carlo batch needs at least two seeds")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be unique")
        return self

    def settings(self, **overrides) -> CalibSettings:
        overrides = {"mode": self.mode, **overrides}
        if self.config is None:
            return CalibSettings(**overrides)
        return CalibSettings.from_json_file(self.config, **overrides)


def load_manifest(path: str) -> RunManifest:
    if not os.path.exists(path):
        raise ManifestError("manifest file not found", {"path": path})
    try:
        with open(path, encoding="utf-8") as fh:
            manifest = RunManifest.model_validate(json.load(fh))
    except json.JSONDecodeError as exc:
        raise ManifestError("manifest is not valid JSON", {"path": path, "line": exc.lineno}) from exc
    except ValidationError as exc:
        raise ManifestError("manifest failed validation", {"path": path, "errors": exc.errors(include_url=False)}) from exc
    if manifest.config is not None:
        config_path = manifest.config
        if not os.path.isabs(config_path):
            config_path = os.path.join(os.path.dirname(os.path.abspath(path)), config_path)
        if not os.path.exists(config_path):
            raise ManifestError("config file named by the manifest does not exist", {"config": manifest.config})
        manifest = manifest.model_copy(update={"config": config_path})
    return manifest
