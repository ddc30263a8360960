import sys
import os
from typing import Type
from pydantic import BaseModel

# Add project root to path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from calib_config import (
    AmbiguitySettings, CalibrationGuess, CalibSettings, ModeProfile, MotionGates, OutlierGates, PriorSettings,
    SensorNoiseSpec, SimulationSettings, SolverSettings, WindowSettings,
)
from fgo.inputs import AmbiguityTruth, FaultRecord, ScenarioInfo, TruthCalibration
from gnss.models import LeverArm, OutlierReport
from harness.manifest import RunManifest
from harness.metrics import DrMetrics, ErrorSummary, ParameterError
from simulator.faults import CycleSlip, FaultSpec, PseudorangeStep

OUTPUT_FILE = "docs/api-reference.md"


def _type_name(info: dict) -> str:
    if "anyOf" in info:
        types = [t.get("type", t.get("$ref", "object").split("/")[-1]) for t in info["anyOf"]]
        name = " / ".join(t for t in types if t != "null")
        return name + "?" if "null" in types else name
    if "$ref" in info:
        return info["$ref"].split("/")[-1]
    if "allOf" in info:
        return info["allOf"][0].get("$ref", "object").split("/")[-1]
    if "enum" in info:
        return " | ".join(str(v) for v in info["enum"])
    return info.get("type", "any")


def _default(name: str, info: dict, schema: dict) -> str:
    if "default" not in info:
        return "**Required**" if name in schema.get("required", []) else "None"
    default = info["default"]
    if isinstance(default, dict):
        return "*(group)*"
    return f"`{default}`"


def generate_model_markdown(model: Type[BaseModel], title: str) -> str:
    schema = model.model_json_schema()
    props = schema.get("properties", {})

    md = [f"### {title}\n"]
    if model.__doc__ and schema.get("description"):
        md.append(f"{' '.join(schema['description'].split())}\n")

    md.append("| Field | Type | Default |")
    md.append("|-------|------|---------|")
    for name, info in props.items():
        md.append(f"| `{name}` | `{_type_name(info)}` | {_default(name, info, schema)} |")

    md.append("\n")
    return "\n".join(md)


def main():
    content = [
        "# 📚 API Reference",
        "\n> **Note:** This file is auto-generated by `scripts/generate_api_reference.py`.",
        "\n## Configuration (`CALIB_` environment / `--config` JSON)\n",
        generate_model_markdown(CalibSettings, "CalibSettings"),
    ]

    groups = [
        (SensorNoiseSpec, "SensorNoiseSpec (`noise`)"),
        (OutlierGates, "OutlierGates (`outliers`)"),
        (SolverSettings, "SolverSettings (`solver`)"),
        (WindowSettings, "WindowSettings (`window`)"),
        (AmbiguitySettings, "AmbiguitySettings (`ambiguity`)"),
        (MotionGates, "MotionGates (`motion`)"),
        (PriorSettings, "PriorSettings (`priors`)"),
        (CalibrationGuess, "CalibrationGuess (`initial_guess`)"),
        (SimulationSettings, "SimulationSettings (`simulation`)"),
        (ModeProfile, "ModeProfile"),
    ]
    for model, title in groups:
        content.append(generate_model_markdown(model, title))

    content.append("## Datasets\n")
    for model, title in [(ScenarioInfo, "ScenarioInfo (`scenario.json`)"), (TruthCalibration, "TruthCalibration"),
                         (AmbiguityTruth, "AmbiguityTruth"), (FaultRecord, "FaultRecord"), (LeverArm, "LeverArm")]:
        content.append(generate_model_markdown(model, title))

    content.append("## Fault Injection\n")
    for model, title in [(FaultSpec, "FaultSpec"), (PseudorangeStep, "PseudorangeStep"), (CycleSlip, "CycleSlip")]:
        content.append(generate_model_markdown(model, title))

    content.append("## Evaluation\n")
    for model, title in [(RunManifest, "RunManifest (`montecarlo --manifest`)"), (OutlierReport, "OutlierReport"),
                         (DrMetrics, "DrMetrics"), (ParameterError, "ParameterError"), (ErrorSummary, "ErrorSummary")]:
        content.append(generate_model_markdown(model, title))

    with open(OUTPUT_FILE, "w") as f:
        f.write("\n".join(content))

    print(f"✅ Generated API Reference at {OUTPUT_FILE}")


if __name__ == "__main__":
    main()
