import argparse
import json
import logging
import os
import sys
from typing import Dict, List, Optional

import numpy as np
import structlog
from pydantic import ValidationError

# Adjust path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from calib_config import CalibSettings, validate_settings
from harness.errors import ConfigError, DataFormatError, HarnessError

logger = structlog.get_logger()


# ──────────────────────────────────────────────
# Logging
# ──────────────────────────────────────────────
def setup_logging(config: CalibSettings) -> None:
    os.makedirs(config.log_dir, exist_ok=True)

    structlog.configure(
        processors=[
            structlog.stdlib.add_log_level,
            structlog.stdlib.PositionalArgumentsFormatter(),
            structlog.processors.TimeStamper(fmt="%Y-%m-%d %H:%M:%S"),
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            structlog.stdlib.ProcessorFormatter.wrap_for_formatter,
        ],
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )

    # File Handler
    file_handler = logging.FileHandler(config.log_file_path)
    file_handler.setFormatter(structlog.stdlib.ProcessorFormatter(processor=structlog.processors.JSONRenderer()))
    # Console goes to stderr so stdout stays free for tables
    console_handler = logging.StreamHandler()
    console_handler.setFormatter(structlog.stdlib.ProcessorFormatter(
        processor=structlog.dev.ConsoleRenderer(colors=False)))

    root_logger = logging.getLogger()
    root_logger.handlers.clear()
    root_logger.addHandler(file_handler)
    root_logger.addHandler(console_handler)
    root_logger.setLevel(config.log_level)

    # OpenTelemetry Setup
    try:
        from telemetry import setup_telemetry
        root_logger.addHandler(setup_telemetry("gnss-odo-calibration"))
    except Exception as e:
        logger.warning("telemetry_init_failed", error=str(e))


def validate_config(config: CalibSettings) -> None:
    """Stops the run before any work when the configuration is unusable."""
    errors = validate_settings(config)
    if errors:
        for err in errors:
            logger.error("config_validation_error", error=err)
        raise ConfigError("configuration is invalid", {"errors": errors})
    logger.info("config_validation_passed", mode=config.mode)


def load_settings(args: argparse.Namespace) -> CalibSettings:
    """Environment < JSON file < command-line flags."""
    overrides = {}
    if getattr(args, "mode", None):
        overrides["mode"] = args.mode
    try:
        if getattr(args, "config", None):
            if not os.path.exists(args.config):
                raise ConfigError("config file not found", {"path": args.config})
            return CalibSettings.from_json_file(args.config, **overrides)
        return CalibSettings(**overrides)
    except ValidationError as exc:
        raise ConfigError("config failed validation", {"errors": exc.errors(include_url=False)}) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("config file is not valid JSON", {"path": args.config, "line": exc.lineno}) from exc


def run_manifest(args: argparse.Namespace, config: CalibSettings, **extra) -> dict:
    return {"command": args.command, "args": {k: v for k, v in vars(args).items() if k != "func"},
            "config": config.model_dump(mode="json"), **extra}


def _fault_spec(args: argparse.Namespace, config: CalibSettings):
    from simulator.faults import FaultSpec
    return FaultSpec(
        lever_arm_error=config.simulation.lever_arm_fault if args.lever_arm_fault else None,
        outliers_per_100=args.outliers_per_100,
    )


# ──────────────────────────────────────────────
# Subcommands
# ──────────────────────────────────────────────
def cmd_simulate(args: argparse.Namespace, config: CalibSettings) -> int:
    from harness.dataset_io import save_dataset, write_manifest
    from rich.console import Console
    from simulator.scenarios import simulate

    sim_updates = {}
    if args.duration is not None:
        sim_updates["duration"] = args.duration
    if args.no_perturb:
        sim_updates["perturb_guess"] = False
    if sim_updates:
        config = config.model_copy(update={"simulation": config.simulation.model_copy(update=sim_updates)})

    dataset = simulate(args.scenario, config, seed=args.seed, faults=_fault_spec(args, config),
                       noiseless=args.noiseless)
    written = save_dataset(dataset, args.out)
    write_manifest(args.out, run_manifest(args, config))
    Console().print(f"[green]Wrote {len(written)} files to {args.out}[/green] "
                    f"({len(dataset.rover)} epochs, {len(dataset.imu)} IMU samples)")
    return 0


def cmd_calibrate(args: argparse.Namespace, config: CalibSettings) -> int:
    from fgo.pipeline import run_calibration
    from harness.dataset_io import load_dataset, write_json, write_run
    from harness.metrics import ErrorSummary, calibration_errors
    from harness.report import print_calibration_errors, print_final_calibration

    dataset = load_dataset(args.data)
    run = run_calibration(dataset, config)
    out = args.out or os.path.join(config.output_dir, "calibrate")
    write_run(run, out, run_manifest(args, config, restarts=run.restarts))
    if run.calibration.empty:
        logger.warning("calibration_empty", data=args.data)
        return 0
    print_final_calibration(run.calibration)
    if dataset.scenario.truth is not None:
        errors = calibration_errors(run.calibration, dataset.scenario.truth)
        write_json(os.path.join(out, "errors.json"), ErrorSummary(parameters=errors).model_dump(mode="json"))
        print_calibration_errors(errors)
    return 0


def cmd_observability(args: argparse.Namespace, config: CalibSettings) -> int:
    from harness.dataset_io import load_dataset, read_table, write_json
    from harness.report import print_observability
    from observability.analysis import analyze, empirical_crosscheck, prior_stds, rates_from_truth
    from preintegration.models import MountExtrinsics
    from simulator.scenarios import spatial_rates

    if args.scenario == "spatial":
        sim = config.simulation
        mount = MountExtrinsics.from_rpy(sim.truth_translation, *np.radians(sim.truth_rpy_deg))
        rates = spatial_rates()
        out = args.out or os.path.join(config.output_dir, "observability")
    else:
        if not args.data:
            raise DataFormatError("observability needs --data or --scenario spatial")
        dataset = load_dataset(args.data)
        if dataset.truth is None or dataset.scenario.truth is None:
            raise DataFormatError("observability needs a dataset with truth rows", {"data": args.data})
        truth = dataset.scenario.truth
        mount = MountExtrinsics.from_rpy(truth.translation, *np.radians(truth.rpy_deg))
        rates = rates_from_truth(dataset.truth, args.t0, args.t1)
        out = args.out or args.data
    if not rates:
        raise DataFormatError("no rates inside the requested interval", {"t0": args.t0, "t1": args.t1})

    report = analyze(rates, mount.rotation.T, mount.translation)
    payload = report.to_dict()
    verdicts = []
    if args.run:
        calibration = read_table(os.path.join(args.run, "calibration.csv"))
        verdicts = empirical_crosscheck(calibration, prior_stds(config.priors), report)
        payload["crosscheck"] = [vars(v) for v in verdicts]
    write_json(os.path.join(out, "observability.json"), payload)
    print_observability(report, verdicts)
    return 0


def cmd_dr_eval(args: argparse.Namespace, config: CalibSettings) -> int:
    from harness.dataset_io import load_dataset, read_table, write_json, write_manifest
    from harness.dead_reckoning import evaluate_outage
    from harness.report import print_dead_reckoning

    dataset = load_dataset(args.data)
    calibration = trajectory = None
    if args.run:
        calibration = read_table(os.path.join(args.run, "calibration.csv"), ("t", "px", "py", "pz", "s_v", "s_w"))
        trajectory_path = os.path.join(args.run, "trajectory.csv")
        if os.path.exists(trajectory_path):
            trajectory = read_table(trajectory_path, ("t", "x", "y", "z", "roll", "pitch", "yaw"))
    choices: List[str] = args.calibration or (["final", "initial"] if args.run else ["truth"])
    out = args.out or args.run or args.data

    results = {}
    for choice in dict.fromkeys(choices):
        path, metrics = evaluate_outage(dataset, choice, args.outage_start, calibration, trajectory, config)
        os.makedirs(out, exist_ok=True)
        path.to_csv(os.path.join(out, f"dr_{choice}.csv"), index=False)
        results[choice] = metrics

    payload: Dict[str, object] = {"outage_start": args.outage_start,
                                  "dead_reckoning": {k: m.model_dump() for k, m in results.items()}}
    if "final" in results and "initial" in results and results["initial"].max_horizontal > 0.0:
        payload["max_improvement"] = 1.0 - results["final"].max_horizontal / results["initial"].max_horizontal
    write_json(os.path.join(out, "errors.json"), payload)
    write_manifest(out, run_manifest(args, config))
    print_dead_reckoning(results)
    return 0


def cmd_montecarlo(args: argparse.Namespace, config: Optional[CalibSettings]) -> int:
    from harness.manifest import RunManifest, load_manifest
    from harness.montecarlo import run_montecarlo
    from harness.report import print_montecarlo

    if args.manifest:
        manifest = load_manifest(args.manifest)
        config = manifest.settings(**({"mode": args.mode} if args.mode else {}))
        if args.mode:
            manifest = manifest.model_copy(update={"mode": args.mode})
    else:
        manifest = RunManifest(
            scenario=args.scenario,
            config=args.config,
            mode=config.mode,
            seeds=list(range(args.seed_start, args.seed_start + (args.seeds or config.mc_seeds))),
            output_dir=args.out or os.path.join(config.output_dir, f"montecarlo-{config.mode}"),
            faults=_fault_spec(args, config),
            dead_reckoning=args.dead_reckoning,
            outage_start=args.outage_start,
            dr_scenario=args.dr_scenario,
        )
    validate_config(config)
    result = run_montecarlo(manifest, config, workers=args.workers)
    print_montecarlo(result["stats"], result["summary"])
    return 0


# ──────────────────────────────────────────────
# Argument Parsing
# ──────────────────────────────────────────────
def build_parser() -> argparse.ArgumentParser:
    from simulator.scenarios import SCENARIO_NAMES, SCENARIOS

    modes = ["tc-ar", "tc-war", "le-fixed", "le-online"]
    parser = argparse.ArgumentParser(description="GNSS/IMU/odometer online extrinsic calibration")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=str, default=None, help="JSON file with CalibSettings values")

    def faults(p: argparse.ArgumentParser) -> None:
        p.add_argument("--lever-arm-fault", action="store_true",
                       help="Offset the assumed GNSS lever arm by SIMULATION__LEVER_ARM_FAULT")
        p.add_argument("--outliers-per-100", type=float, default=0.0,
                       help="Random rover pseudo-range outliers per 100 epochs")

    p = sub.add_parser("simulate", help="Synthesize a dataset for a named scenario")
    common(p)
    faults(p)
    p.add_argument("--scenario", choices=sorted(SCENARIOS), default="default")
    p.add_argument("--seed", type=int, default=None, help="Defaults to SIMULATION__SEED")
    p.add_argument("--out", type=str, required=True, help="Dataset directory")
    p.add_argument("--duration", type=float, default=None, help="Scenario length in seconds")
    p.add_argument("--noiseless", action="store_true", help="No sensor noise or bias in the streams")
    p.add_argument("--no-perturb", action="store_true", help="Use the configured initial guess unperturbed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="Run the sliding-window estimator over a dataset")
    common(p)
    p.add_argument("--data", type=str, required=True, help="Dataset directory")
    p.add_argument("--mode", choices=modes, default=None)
    p.add_argument("--out", type=str, default=None, help="Run directory")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("observability", help="Rank analysis of the extrinsic parameters")
    common(p)
    p.add_argument("--data", type=str, default=None, help="Dataset directory with truth rows")
    p.add_argument("--scenario", choices=[n for n in SCENARIO_NAMES if n not in SCENARIOS], default=None,
                   help="Use virtual rates instead of a dataset")
    p.add_argument("--t0", type=float, default=None, help="Start of the analysed interval [s]")
    p.add_argument("--t1", type=float, default=None, help="End of the analysed interval [s]")
    p.add_argument("--run", type=str, default=None, help="Run directory for the posterior std cross-check")
    p.add_argument("--out", type=str, default=None)
    p.set_defaults(func=cmd_observability)

    p = sub.add_parser("dr-eval", help="Dead-reckon through a simulated GNSS outage")
    common(p)
    p.add_argument("--data", type=str, required=True, help="Dataset directory with truth rows")
    p.add_argument("--run", type=str, default=None, help="Run directory from calibrate")
    p.add_argument("--calibration", choices=["final", "initial", "truth"], action="append", default=None,
                   help="Calibration set to evaluate; may repeat")
    p.add_argument("--outage-start", type=float, default=100.0, help="Outage start [s]")
    p.add_argument("--out", type=str, default=None)
    p.set_defaults(func=cmd_dr_eval)

    p = sub.add_parser("montecarlo", help="Calibration statistics over independent seeds")
    common(p)
    faults(p)
    p.add_argument("--manifest", type=str, default=None, help="RunManifest JSON; other flags are ignored")
    p.add_argument("--scenario", choices=sorted(SCENARIOS), default="default")
    p.add_argument("--mode", choices=modes, default=None)
    p.add_argument("--seeds", type=int, default=None, help="Number of seeds, defaults to MC_SEEDS")
    p.add_argument("--seed-start", type=int, default=0)
    p.add_argument("--workers", type=int, default=None, help="Worker processes, defaults to MC_WORKERS")
    p.add_argument("--dead-reckoning", action="store_true", help="Also score the outage per seed")
    p.add_argument("--outage-start", type=float, default=100.0)
    p.add_argument("--dr-scenario", choices=sorted(SCENARIOS), default=None)
    p.add_argument("--out", type=str, default=None)
    p.set_defaults(func=cmd_montecarlo)
    return parser


def emit_error(code: str, message: str, context: Optional[dict] = None) -> None:
    print(json.dumps({"code": code, "message": message, "context": context or {}}, default=str), file=sys.stderr)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_settings(args)
        setup_logging(config)
        if args.command != "montecarlo":
            validate_config(config)
        return args.func(args, config)
    except HarnessError as exc:
        logger.error("command_failed", command=args.command, code=exc.code, error=exc.message)
        print(exc.to_json(), file=sys.stderr)
        return exc.exit_code
    except Exception as exc:
        logger.exception("command_crashed", command=args.command)
        emit_error("internal_error", str(exc), {"type": type(exc).__name__})
        return 1


if __name__ == "__main__":
    sys.exit(main())
