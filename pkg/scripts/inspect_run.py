import json
import os
import sys

import pandas as pd
from rich.console import Console
from rich.table import Table

# Add project root to path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from harness.dataset_io import DATASET_FILES, RUN_FILES
from harness.report import print_final_calibration

console = Console()


def _files(directory: str) -> None:
    table = Table(title=f"Files in {directory}")
    table.add_column("File")
    table.add_column("Rows", justify="right")
    table.add_column("Columns", justify="right")
    for name in sorted(os.listdir(directory)):
        path = os.path.join(directory, name)
        if name.endswith(".csv"):
            frame = pd.read_csv(path)
            table.add_row(name, str(len(frame)), str(len(frame.columns)))
        elif name.endswith(".json"):
            table.add_row(name, "-", "-")
    console.print(table)


def _windows(directory: str) -> None:
    windows = pd.read_csv(os.path.join(directory, "windows.csv"))
    if windows.empty:
        return
    table = Table(title="Window solves")
    table.add_column("Stage")
    table.add_column("Status")
    table.add_column("Count", justify="right")
    table.add_column("Mean iterations", justify="right")
    table.add_column("Mean latency [ms]", justify="right")
    for (stage, status), group in windows.groupby(["stage", "status"]):
        table.add_row(stage, status, str(len(group)), f"{group['iterations'].mean():.1f}",
                      f"{group['latency_ms'].mean():.1f}")
    console.print(table)


def _fixes(directory: str) -> None:
    fixes = pd.read_csv(os.path.join(directory, "fixes.csv"))
    if fixes.empty:
        console.print("No ambiguity fix attempts recorded.")
        return
    accepted = fixes["accepted"].astype(bool)
    first = fixes.loc[accepted, "t"].min() if accepted.any() else None
    console.print(f"Fix attempts: {len(fixes)}, accepted: {int(accepted.sum())}, "
                  f"first fix: {'-' if first is None else f'{first:.1f} s'}")
    rejected = fixes.loc[~accepted, "reason"].value_counts()
    for reason, count in rejected.items():
        console.print(f"  rejected ({reason}): {count}")


def inspect_run(directory: str) -> int:
    if not os.path.isdir(directory):
        console.print(f"❌ Directory {directory} not found.")
        return 1

    _files(directory)
    names = set(os.listdir(directory))
    if set(RUN_FILES) <= names:
        calibration = pd.read_csv(os.path.join(directory, "calibration.csv"))
        if not calibration.empty:
            print_final_calibration(calibration)
        _windows(directory)
        _fixes(directory)
    elif "scenario.json" in names:
        missing = [f for f in DATASET_FILES if f not in names and f != "truth.csv"]
        if missing:
            console.print(f"⚠️  Dataset is missing: {', '.join(missing)}")
        with open(os.path.join(directory, "scenario.json"), encoding="utf-8") as fh:
            scenario = json.load(fh)
        console.print(f"Scenario: {scenario.get('name')} (seed {scenario.get('seed')})")

    if "manifest.json" in names:
        with open(os.path.join(directory, "manifest.json"), encoding="utf-8") as fh:
            manifest = json.load(fh)
        console.print(f"Command: {manifest.get('command')}, restarts: {manifest.get('restarts', 0)}")
    return 0


if __name__ == "__main__":
    if len(sys.argv) != 2:
        console.print("Usage: python scripts/inspect_run.py <run-or-dataset-directory>")
        sys.exit(2)
    sys.exit(inspect_run(sys.argv[1]))
