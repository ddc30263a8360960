from typing import Dict, Iterable, Optional

import pandas as pd
from rich.console import Console
from rich.table import Table

from harness.metrics import DrMetrics, ParameterError
from observability.analysis import EXTRINSIC_AXES, ObservabilityReport, ParameterVerdict

console = Console()


def _fmt(value: Optional[float], digits: int = 4) -> str:
    if value is None or value != value:
        return "-"
    return f"{value:.{digits}f}"


def print_calibration_errors(errors: Dict[str, ParameterError], title: str = "Calibration errors") -> None:
    table = Table(title=title)
    table.add_column("Parameter", style="cyan")
    table.add_column("Estimate", justify="right")
    table.add_column("Truth", justify="right")
    table.add_column("Error", justify="right")
    table.add_column("Converged at [s]", justify="right")
    for name, e in errors.items():
        color = "green" if e.converged_at is not None else "yellow"
        table.add_row(name, _fmt(e.estimate), _fmt(e.truth), f"[{color}]{_fmt(e.error)}[/{color}]",
                      _fmt(e.converged_at, 1))
    console.print(table)


def print_final_calibration(calibration: pd.DataFrame) -> None:
    row = calibration.iloc[-1]
    table = Table(title=f"Calibration at t = {row['t']:.1f} s")
    table.add_column("Parameter", style="cyan")
    table.add_column("Estimate", justify="right")
    table.add_column("Std", justify="right")
    for name in ["px", "py", "pz", "roll", "pitch", "yaw", "s_v", "s_w"]:
        table.add_row(name, _fmt(float(row[name])), _fmt(float(row[f"std_{name}"])))
    console.print(table)


def print_dead_reckoning(results: Dict[str, DrMetrics]) -> None:
    table = Table(title="Dead reckoning (horizontal)")
    table.add_column("Calibration", style="cyan")
    table.add_column("MAX [m]", justify="right")
    table.add_column("RMSE [m]", justify="right")
    table.add_column("Vertical MAX [m]", justify="right")
    for name, m in results.items():
        table.add_row(name, _fmt(m.max_horizontal, 3), _fmt(m.rmse_horizontal, 3), _fmt(m.max_vertical, 3))
    console.print(table)


def print_observability(report: ObservabilityReport, verdicts: Iterable[ParameterVerdict] = ()) -> None:
    console.print(f"[bold]Observability rank:[/bold] {report.rank}/6 over {report.n_blocks} blocks")
    table = Table()
    table.add_column("Axis", style="cyan")
    table.add_column("Identifiable", justify="center")
    for axis in EXTRINSIC_AXES:
        ok = report.identifiable[axis]
        table.add_row(axis, "[green]yes[/green]" if ok else "[red]no[/red]")
    console.print(table)
    verdicts = list(verdicts)
    if verdicts:
        check = Table(title="Posterior std cross-check")
        check.add_column("Parameter", style="cyan")
        check.add_column("Prior std", justify="right")
        check.add_column("Final std", justify="right")
        check.add_column("Observable", justify="center")
        check.add_column("Agrees", justify="center")
        for v in verdicts:
            check.add_row(v.parameter, _fmt(v.prior_std), _fmt(v.final_std), "yes" if v.observable else "no",
                          "[red]no[/red]" if v.mismatch else "yes")
        console.print(check)


def print_montecarlo(stats: pd.DataFrame, summary: dict) -> None:
    table = Table(title=f"Monte-Carlo ({summary['seeds']} seeds, {summary['failures']} diverged)")
    for column in ["Checkpoint", "Parameter", "Runs", "Mean |err|", "Std err", "Mean reported std"]:
        table.add_column(column, justify="right" if column not in ("Checkpoint", "Parameter") else "left")
    for row in stats.itertuples():
        table.add_row(str(row.checkpoint), row.parameter, str(row.runs), _fmt(row.mean_abs_error),
                      _fmt(row.std_error), _fmt(row.mean_reported_std))
    console.print(table)
    dr = summary.get("dead_reckoning")
    if dr:
        console.print(f"Dead reckoning MAX: calibrated {dr['mean_final_max']:.3f} m, "
                      f"initial guess {dr['mean_initial_max']:.3f} m, "
                      f"runs improved by >= 50%: {dr['share_improved_50pct']:.0%}")
