"""Monte-Carlo calibration statistics over independent seeds.

Each seed simulates its own dataset (noise, constellation and perturbed
initial guess) and runs the estimator in a separate process. A run counts
as diverged when it raises, when its final cost is not finite, or when the
final cost exceeds ten times the median over all seeds; diverged runs are
reported but excluded from the statistics.
"""
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
import structlog
from opentelemetry import trace

from calib_config import CalibSettings
from fgo.pipeline import run_calibration
from harness.dataset_io import write_json, write_manifest
from harness.dead_reckoning import evaluate_outage
from harness.manifest import RunManifest
from harness.metrics import PARAMETERS, parameter_error, row_at, truth_values
from simulator.faults import FaultSpec
from simulator.scenarios import simulate

logger = structlog.get_logger()
tracer = trace.get_tracer(__name__)

DIVERGENCE_FACTOR = 10.0
RUN_COLUMNS = ["seed", "checkpoint", "t", "parameter", "estimate", "truth", "error", "abs_error", "std", "diverged"]
STATS_COLUMNS = ["checkpoint", "parameter", "runs", "mean_abs_error", "std_error", "mean_error", "mean_reported_std"]


def _checkpoint_rows(seed: int, calibration: pd.DataFrame, truth: Dict[str, float],
                     checkpoints: List[float]) -> List[dict]:
    t0 = float(calibration["t"].iloc[0])
    labels = [(f"{c:g}", t0 + c) for c in checkpoints] + [("final", float(calibration["t"].iloc[-1]))]
    rows = []
    for label, t in labels:
        row = row_at(calibration, t)
        for name in PARAMETERS:
            error = float(parameter_error(name, row[name], truth[name]))
            rows.append({"seed": seed, "checkpoint": label, "t": float(row["t"]), "parameter": name,
                         "estimate": float(row[name]), "truth": truth[name], "error": error,
                         "abs_error": abs(error), "std": float(row[f"std_{name}"]), "diverged": False})
    return rows


def run_seed(seed: int, scenario: str, config_data: dict, faults_data: dict, checkpoints: List[float],
             dead_reckoning: bool = False, outage_start: float = 100.0,
             dr_scenario: Optional[str] = None) -> dict:
    """One Monte-Carlo run; module-level so it can be shipped to a worker process."""
    config = CalibSettings(**config_data)
    faults = FaultSpec.model_validate(faults_data)
    started = time.perf_counter()
    with tracer.start_as_current_span("montecarlo_run") as span:
        span.set_attribute("seed", seed)
        span.set_attribute("mode", config.mode)
        try:
            dataset = simulate(scenario, config, seed=seed, faults=faults)
            run = run_calibration(dataset, config)
            costs = run.windows["final_cost"].to_numpy(dtype=float)
            final_cost = float(costs[-1]) if len(costs) else float("nan")
            result = {
                "seed": seed,
                "rows": _checkpoint_rows(seed, run.calibration, truth_values(dataset.scenario.truth), checkpoints),
                "final_cost": final_cost,
                "restarts": run.restarts,
                "error": None,
            }
            if dead_reckoning:
                dr_data = dataset if dr_scenario in (None, scenario) else simulate(dr_scenario, config, seed=seed)
                dr_run = run if dr_data is dataset else run_calibration(dr_data, config)
                _, calibrated = evaluate_outage(dr_data, "final", outage_start, dr_run.calibration, dr_run.trajectory,
                                                config)
                _, initial = evaluate_outage(dr_data, "initial", outage_start, dr_run.calibration, dr_run.trajectory,
                                             config)
                result["dr_final_max"] = calibrated.max_horizontal
                result["dr_final_rmse"] = calibrated.rmse_horizontal
                result["dr_initial_max"] = initial.max_horizontal
                result["dr_initial_rmse"] = initial.rmse_horizontal
        except Exception as exc:
            span.record_exception(exc)
            logger.error("montecarlo_run_failed", seed=seed, error=str(exc))
            result = {"seed": seed, "rows": [], "final_cost": float("nan"), "restarts": 0, "error": str(exc)}
        result["latency_ms"] = round((time.perf_counter() - started) * 1000.0, 1)
        span.set_attribute("final_cost", result["final_cost"])
    return result


def divergence_flags(final_costs: Dict[int, float], errors: Dict[int, Optional[str]]) -> Dict[int, bool]:
    finite = [c for c in final_costs.values() if math.isfinite(c)]
    median = float(np.median(finite)) if finite else float("nan")
    flags = {}
    for seed, cost in final_costs.items():
        flags[seed] = (errors.get(seed) is not None or not math.isfinite(cost)
                       or (math.isfinite(median) and cost > DIVERGENCE_FACTOR * max(median, 1e-12)))
    return flags


def summarize(runs: pd.DataFrame) -> pd.DataFrame:
    kept = runs[~runs["diverged"]]
    if kept.empty:
        return pd.DataFrame(columns=STATS_COLUMNS)
    grouped = kept.groupby(["checkpoint", "parameter"], sort=False)
    stats = grouped.agg(
        runs=("seed", "nunique"),
        mean_abs_error=("abs_error", "mean"),
        std_error=("error", "std"),
        mean_error=("error", "mean"),
        mean_reported_std=("std", "mean"),
    ).reset_index()
    return stats[STATS_COLUMNS]


def std_error_correlation(runs: pd.DataFrame) -> Dict[str, Optional[float]]:
    """Pearson correlation of reported std and absolute error at the final checkpoint."""
    final = runs[(runs["checkpoint"] == "final") & ~runs["diverged"]]
    out = {}
    for name, group in final.groupby("parameter"):
        std, err = group["std"].to_numpy(dtype=float), group["abs_error"].to_numpy(dtype=float)
        valid = np.isfinite(std) & np.isfinite(err)
        if valid.sum() < 3 or np.std(std[valid]) == 0.0 or np.std(err[valid]) == 0.0:
            out[name] = None
        else:
            out[name] = float(np.corrcoef(std[valid], err[valid])[0, 1])
    return out


def run_montecarlo(manifest: RunManifest, config: Optional[CalibSettings] = None,
                   workers: Optional[int] = None) -> Dict[str, object]:
    config = config or manifest.settings()
    workers = workers or config.mc_workers
    config_data = config.model_dump(mode="json")
    faults_data = manifest.faults.model_dump(mode="json")
    args = [(seed, manifest.scenario, config_data, faults_data, list(config.mc_checkpoints),
             manifest.dead_reckoning, manifest.outage_start, manifest.dr_scenario) for seed in manifest.seeds]

    logger.info("montecarlo_started", seeds=len(args), workers=workers, mode=manifest.mode, scenario=manifest.scenario)
    if workers <= 1:
        results = [run_seed(*a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_seed, *a) for a in args]
            results = [f.result() for f in futures]

    flags = divergence_flags({r["seed"]: r["final_cost"] for r in results}, {r["seed"]: r["error"] for r in results})
    rows = []
    for r in results:
        if flags[r["seed"]]:
            logger.warning("montecarlo_run_diverged", seed=r["seed"], final_cost=r["final_cost"], error=r["error"])
        for row in r["rows"]:
            rows.append({**row, "diverged": flags[r["seed"]]})
    runs = pd.DataFrame(rows, columns=RUN_COLUMNS)
    runs["diverged"] = runs["diverged"].astype(bool)
    stats = summarize(runs)

    os.makedirs(manifest.output_dir, exist_ok=True)
    runs.to_csv(os.path.join(manifest.output_dir, "mc_runs.csv"), index=False)
    stats.to_csv(os.path.join(manifest.output_dir, "mc_stats.csv"), index=False)

    summary: Dict[str, object] = {
        "mode": manifest.mode,
        "scenario": manifest.scenario,
        "seeds": len(results),
        "failures": int(sum(flags.values())),
        "diverged_seeds": sorted(s for s, f in flags.items() if f),
        "std_error_correlation": std_error_correlation(runs),
        "final": {row.parameter: {"mean_abs_error": row.mean_abs_error, "std_error": row.std_error}
                  for row in stats[stats["checkpoint"] == "final"].itertuples()},
    }
    if manifest.dead_reckoning:
        dr = pd.DataFrame([r for r in results if not flags[r["seed"]] and "dr_final_max" in r])
        if not dr.empty:
            improvement = 1.0 - dr["dr_final_max"] / dr["dr_initial_max"]
            summary["dead_reckoning"] = {
                "mean_final_max": float(dr["dr_final_max"].mean()),
                "mean_initial_max": float(dr["dr_initial_max"].mean()),
                "mean_final_rmse": float(dr["dr_final_rmse"].mean()),
                "mean_initial_rmse": float(dr["dr_initial_rmse"].mean()),
                "share_improved_50pct": float((improvement >= 0.5).mean()),
            }
            dr.drop(columns=["rows"]).to_csv(os.path.join(manifest.output_dir, "mc_dead_reckoning.csv"), index=False)
    write_json(os.path.join(manifest.output_dir, "errors.json"), summary)
    write_manifest(manifest.output_dir, {"command": "montecarlo", "manifest": manifest.model_dump(mode="json"),
                                         "config": config_data})
    logger.info("montecarlo_finished", seeds=len(results), failures=summary["failures"],
                output_dir=manifest.output_dir)
    return {"runs": runs, "stats": stats, "summary": summary}
