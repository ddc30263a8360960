import json
from typing import Any, Dict, Optional


class HarnessError(Exception):
    """Failure surfaced to the CLI as ``{code, message, context}`` on stderr."""
    code = "harness_error"
    exit_code = 1

    def __init__(self, message: str, context: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.context = context or {}

    def to_dict(self) -> Dict[str, Any]:
        return {"code": self.code, "message": self.message, "context": self.context}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), default=str)


class DataFormatError(HarnessError):
    code = "data_format"
    exit_code = 2


class UnitSanityError(HarnessError):
    code = "unit_sanity"
    exit_code = 2


class ManifestError(HarnessError):
    code = "manifest"
    exit_code = 2


class EstimationError(HarnessError):
    code = "estimation"


class ConfigError(HarnessError):
    code = "config"
    exit_code = 2
