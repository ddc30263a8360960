import json
import math
import os
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


# ──────────────────────────────────────────────
# Sensor Noise (defaults reproduce the simulation table)
# ──────────────────────────────────────────────
class SensorNoiseSpec(BaseModel):
    """Noise levels and rates shared by the simulator and the estimator.

    Units follow the datasheet convention; the ``*_si`` properties convert
    to the SI densities the preintegration code consumes.
    """
    pseudorange_sigma0: float = 0.3        # m, scaled by sqrt(1 + 1/sin(El))
    carrier_sigma0: float = 0.003          # m, scaled by sqrt(1 + 1/sin(El))
    doppler_sigma: float = 0.05            # m/s, range-rate noise
    gyro_bias_deg_h: float = 900.0         # deg/h, per-axis truth magnitude
    accel_bias_mgal: float = 5.0           # mGal, per-axis truth magnitude
    angle_random_walk: float = 20.0        # deg/sqrt(h)
    velocity_random_walk: float = 0.1      # m/s/sqrt(h)
    accel_bias_walk: float = 1e-4          # m/s^2/sqrt(s), estimator-side bias drift
    gyro_bias_walk: float = 1e-6           # rad/s/sqrt(s), estimator-side bias drift
    odo_linear_noise: float = 0.01         # m/s per sample
    odo_angular_noise: float = 1.0         # deg/s per sample
    scale_truth: Tuple[float, float] = (0.0, 0.0)         # (s_v, s_w)
    scale_random_walk: Tuple[float, float] = (0.0, 0.0)   # 1/sqrt(s)
    clock_drift_walk: float = 0.1          # m/s/sqrt(s), receiver clock drift random walk
    gnss_rate: float = 1.0                 # Hz
    imu_rate: float = 100.0                # Hz
    odo_rate: float = 25.0                 # Hz

    @field_validator(
        "pseudorange_sigma0", "carrier_sigma0", "doppler_sigma", "angle_random_walk",
        "velocity_random_walk", "accel_bias_walk", "gyro_bias_walk",
        "odo_linear_noise", "odo_angular_noise", "clock_drift_walk",
    )
    @classmethod
    def _non_negative(cls, value: float) -> float:
        if value < 0:
            raise ValueError("noise levels must be >= 0")
        return value

    @field_validator("gnss_rate", "imu_rate", "odo_rate")
    @classmethod
    def _positive_rate(cls, value: float) -> float:
        if value <= 0:
            raise ValueError("rates must be > 0")
        return value

    @property
    def gyro_bias_si(self) -> float:
        return math.radians(self.gyro_bias_deg_h) / 3600.0

    @property
    def accel_bias_si(self) -> float:
        return self.accel_bias_mgal * 1e-5

    @property
    def gyro_noise_density(self) -> float:
        """Angle random walk in rad/sqrt(s)."""
        return math.radians(self.angle_random_walk) / 60.0

    @property
    def accel_noise_density(self) -> float:
        """Velocity random walk in m/s/sqrt(s)."""
        return self.velocity_random_walk / 60.0

    @property
    def odo_angular_noise_si(self) -> float:
        return math.radians(self.odo_angular_noise)

    def noiseless(self) -> "SensorNoiseSpec":
        """Same rates and scale factors with every noise level and bias set to zero."""
        zero = {name: 0.0 for name in (
            "pseudorange_sigma0", "carrier_sigma0", "doppler_sigma", "gyro_bias_deg_h", "accel_bias_mgal",
            "angle_random_walk", "velocity_random_walk", "odo_linear_noise", "odo_angular_noise",
        )}
        return self.model_copy(update={**zero, "scale_random_walk": (0.0, 0.0)})


# ──────────────────────────────────────────────
# Outlier Gates
# ──────────────────────────────────────────────
class OutlierGates(BaseModel):
    stage1_enabled: bool = True
    stage2_enabled: bool = True
    k1: float = 4.0                  # Doppler-screen gate on innovation sigma
    k2: float = 3.0                  # whitened DD residual gate
    max_coast_epochs: int = 5        # consecutive rejections before re-anchoring
    max_epoch_gap: float = 3.0       # s, longer gaps restart a satellite stream


# ──────────────────────────────────────────────
# Nonlinear Solver
# ──────────────────────────────────────────────
class SolverSettings(BaseModel):
    max_iterations: int = 50
    gradient_tolerance: float = 1e-8
    step_tolerance: float = 1e-10
    initial_lambda: float = 1e-4     # damping used after the first rejected step
    lambda_up: float = 10.0
    lambda_down: float = 1.0 / 3.0
    max_lambda: float = 1e10
    max_rejections: int = 5          # consecutive rejected steps before stopping
    huber_delta: float = 1.345
    condition_warning: float = 1e10


# ──────────────────────────────────────────────
# Sliding Window
# ──────────────────────────────────────────────
class WindowSettings(BaseModel):
    capacity: int = 3
    epoch_interval: float = 1.0          # s between estimator states
    max_stream_gap: float = 3.0          # s, larger GNSS/IMU gaps restart the window
    imu_max_sample_gap: float = 0.1      # s
    reintegrate_accel_bias: float = 0.05     # m/s^2
    reintegrate_gyro_bias: float = 0.005     # rad/s
    reintegrate_translation: float = 0.05    # m
    reintegrate_rotation_deg: float = 1.0
    reintegrate_scale: float = 0.01


# ──────────────────────────────────────────────
# Ambiguity Resolution
# ──────────────────────────────────────────────
class AmbiguitySettings(BaseModel):
    ratio_threshold: float = 3.0
    condition_limit: float = 1e12
    fix_variance: float = 1e-6           # cycles^2, weight of the fixed-integer factor
    float_prior_cycles: float = 100.0    # prior std of a freshly initialized SD ambiguity
    partial_fixing: bool = False
    partial_min_elevation_deg: float = 30.0
    resolve_after_fix: bool = True
    min_dimension: int = 2


# ──────────────────────────────────────────────
# Motion Constraints (ZUPT / NHC)
# ──────────────────────────────────────────────
class MotionGates(BaseModel):
    window: float = 1.0                  # s of samples inspected
    zupt_gyro_deg_s: float = 0.05
    zupt_odo_speed: float = 0.02         # m/s, odometer stationarity gate
    nhc_gyro_deg_s: float = 5.0
    nhc_min_speed: float = 1.0           # m/s
    zupt_sigma: float = 0.01             # m/s
    nhc_sigma: float = 0.05              # m/s


# ──────────────────────────────────────────────
# Priors
# ──────────────────────────────────────────────
class PriorSettings(BaseModel):
    mount_translation_std: float = 0.5       # m
    mount_rotation_std_deg: float = 5.0
    scale_std: float = 0.05
    lever_arm_std: float = 0.2               # m, online lever-arm mode only
    position_std: float = 2.0                # m
    velocity_std: float = 0.1                # m/s
    roll_pitch_std_deg: float = 2.0
    yaw_std_deg: float = 10.0
    accel_bias_std: float = 0.05             # m/s^2
    gyro_bias_std_deg_s: float = 0.5
    clock_drift_std: float = 1000.0          # m/s


# ──────────────────────────────────────────────
# Calibration Guess (used when a scenario does not provide one)
# ──────────────────────────────────────────────
class CalibrationGuess(BaseModel):
    translation: Tuple[float, float, float] = (0.0, 0.0, 0.0)   # p^b_m, m
    rpy_deg: Tuple[float, float, float] = (0.0, 0.0, 0.0)       # R^b_m as roll/pitch/yaw
    s_v: float = 0.0
    s_w: float = 0.0


# ──────────────────────────────────────────────
# Estimator Mode Profiles
# ──────────────────────────────────────────────
class ModeProfile(BaseModel):
    """Switches that distinguish the estimator schemes.

    ``le-fixed`` and ``tc-ar`` run the same estimator; they differ in the
    dataset (the lever-arm fault is injected for the ablation).
    """
    name: str
    ambiguity_resolution: bool
    lever_arm: Literal["fixed", "online"]
    use_gnss: bool = True


MODE_PROFILES: Dict[str, ModeProfile] = {
    "tc-ar": ModeProfile(name="tc-ar", ambiguity_resolution=True, lever_arm="fixed"),
    "tc-war": ModeProfile(name="tc-war", ambiguity_resolution=False, lever_arm="fixed"),
    "le-fixed": ModeProfile(name="le-fixed", ambiguity_resolution=True, lever_arm="fixed"),
    "le-online": ModeProfile(name="le-online", ambiguity_resolution=True, lever_arm="online"),
}


# ──────────────────────────────────────────────
# Simulator Defaults
# ──────────────────────────────────────────────
class SimulationSettings(BaseModel):
    seed: int = 0
    n_satellites: int = 20
    constellations: List[str] = ["G"]
    bands: List[str] = ["1", "2"]
    elevation_mask_deg: float = 10.0
    pdop_range: Tuple[float, float] = (1.25, 1.45)
    origin_lat_deg: float = 22.3
    origin_lon_deg: float = 114.18
    origin_height: float = 10.0
    base_offset_enu: Tuple[float, float, float] = (2800.0, 2800.0, 5.0)   # ~4 km baseline
    truth_translation: Tuple[float, float, float] = (0.2, -0.3, 0.1)
    truth_rpy_deg: Tuple[float, float, float] = (2.0, -1.0, 3.0)
    truth_lever_arm: Tuple[float, float, float] = (0.0, 0.3, 0.8)
    lever_arm_fault: Tuple[float, float, float] = (0.1, 0.1, 0.1)
    guess_translation_std: float = 0.2       # m, perturbation of the initial guess
    guess_rotation_std_deg: float = 2.0
    guess_scale_std: float = 0.01
    guess_yaw_std_deg: float = 3.0           # initial heading guess error
    receiver_clock_offset: float = 1e-4      # s
    receiver_clock_drift: float = 1e-8       # s/s
    duration: float = 300.0                  # s
    start_heading_deg: float = 0.0           # vehicle heading at t = 0, CCW from north
    perturb_guess: bool = True               # draw the initial calibration guess around truth


class CalibSettings(BaseSettings):
    # ──────────────────────────────────────────────
    # Estimator Mode
    # ──────────────────────────────────────────────
    mode: Literal["tc-ar", "tc-war", "le-fixed", "le-online"] = "tc-ar"
    use_gnss: Optional[bool] = None          # overrides the profile when set

    # ──────────────────────────────────────────────
    # Grouped Parameters
    # ──────────────────────────────────────────────
    noise: SensorNoiseSpec = SensorNoiseSpec()
    outliers: OutlierGates = OutlierGates()
    solver: SolverSettings = SolverSettings()
    window: WindowSettings = WindowSettings()
    ambiguity: AmbiguitySettings = AmbiguitySettings()
    motion: MotionGates = MotionGates()
    priors: PriorSettings = PriorSettings()
    initial_guess: CalibrationGuess = CalibrationGuess()
    simulation: SimulationSettings = SimulationSettings()

    # ──────────────────────────────────────────────
    # Paths & Logging
    # ──────────────────────────────────────────────
    output_dir: str = "__runs__"
    log_dir: str = "__logs__"
    log_file_name: str = "calibration.jsonl"
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"

    # ──────────────────────────────────────────────
    # Monte-Carlo
    # ──────────────────────────────────────────────
    mc_seeds: int = 40
    mc_workers: int = 4
    mc_checkpoints: List[float] = [0.0, 60.0, 120.0]

    @property
    def log_file_path(self) -> str:
        return os.path.join(self.log_dir, self.log_file_name)

    @property
    def active_mode_profile(self) -> ModeProfile:
        """Profile for the configured mode with any explicit overrides applied."""
        base = MODE_PROFILES[self.mode].model_copy()
        if self.use_gnss is not None:
            base.use_gnss = self.use_gnss
        return base

    @classmethod
    def from_json_file(cls, path: str, **overrides) -> "CalibSettings":
        """Load a JSON config; file values beat environment values, overrides beat both."""
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        data.update(overrides)
        return cls(**data)

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="CALIB_",
        env_nested_delimiter="__",
        extra="ignore",
    )


def validate_settings(config: "CalibSettings") -> List[str]:
    """Collects configuration problems that would make a run meaningless."""
    errors = []
    if config.window.capacity < 2:
        errors.append("WINDOW__CAPACITY must be >= 2 (a window needs a previous state).")
    if config.window.epoch_interval <= 0:
        errors.append("WINDOW__EPOCH_INTERVAL must be > 0.")
    if config.ambiguity.ratio_threshold < 1.0:
        errors.append("AMBIGUITY__RATIO_THRESHOLD must be >= 1.")
    if config.outliers.k1 <= 0 or config.outliers.k2 <= 0:
        errors.append("OUTLIERS__K1 and OUTLIERS__K2 must be > 0.")
    if config.solver.max_iterations < 1:
        errors.append("SOLVER__MAX_ITERATIONS must be >= 1.")
    if config.motion.zupt_gyro_deg_s >= config.motion.nhc_gyro_deg_s:
        errors.append("MOTION__ZUPT_GYRO_DEG_S must be below MOTION__NHC_GYRO_DEG_S.")
    return errors


settings = CalibSettings()
