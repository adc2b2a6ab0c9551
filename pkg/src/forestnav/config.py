"""Run configuration: one flat dataclass with documented defaults.

Config files are plain text, one `key = value` per line, `#` comments.
Unknown keys are rejected so typos cannot silently fall back to defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .sim_world import Gust


class ConfigError(ValueError):
    """Bad config file, unknown key, or unparsable value."""


@dataclass
class RunConfig:
    # episode / world
    seed: int = 0
    density: float = 1.0 / 36.0       # trees per m^2
    world_length: float = 70.0        # m, along +x
    world_width: float = 30.0         # m, centered on y = 0
    start_x: float = 2.0
    start_y: float = 0.0
    altitude: float = 1.5             # flight + camera height, m
    vehicle_radius: float = 0.3
    cruise_speed: float = 1.5         # m/s
    episode_cap_distance: float = 40.0
    episode_cap_time: float = 60.0    # s
    goal_margin: float = 5.0          # goal this far before the world's far edge
    prediction_mode: str = "multi"    # multi | single
    policy: str = "receding_horizon"  # receding_horizon | reactive_baseline | straight_line

    # timing
    dt: float = 0.05                  # control period, s
    frame_interval: int = 5           # control ticks per camera frame
    replan_period: float = 0.5        # s

    # camera
    img_width: int = 320
    img_height: int = 240
    cam_fx: float = 240.0
    cam_fy: float = 240.0

    # state estimation noise (simulator-supplied pose)
    pose_noise_sigma: float = 0.02    # m
    heading_noise_sigma: float = 0.002  # rad
    velocity_noise_sigma: float = 0.02  # m/s

    # IMU
    imu_rate: float = 200.0           # Hz
    gyro_bias_x: float = 0.0
    gyro_bias_y: float = 0.0
    gyro_bias_z: float = 0.0
    imu_noise_sigma: float = 0.002    # rad/s

    # semi-dense mapping
    grad_threshold: float = 0.01
    stereo_steps: int = 96
    sigma_photo: float = 0.01
    stereo_max_candidates: int = 2500
    ssd_accept: float = 0.02
    ambiguity_ratio: float = 1.6
    min_baseline: float = 0.05        # m, stereo gate
    keyframe_distance: float = 0.5    # m, keyframe switch baseline
    export_max_var: float = 0.01      # 1/m^2, map export gate

    # tracking
    huber_delta: float = 0.1
    pyramid_levels: int = 3
    max_iterations: int = 20
    conv_tol: float = 1e-6
    min_inlier_fraction: float = 0.3
    pixel_cap: int = 2500
    scale_window: int = 15
    scale_alpha: float = 0.1

    # plant (ground truth and sysid)
    drag: float = 0.6
    accel_gain: float = 4.0
    yaw_rate_gain: float = 1.5
    noise_pos: float = 0.0
    noise_vel: float = 0.01
    noise_yaw: float = 0.002
    sysid_steps: int = 5000
    sysid_seed: int = 1234

    # wind
    wind_noise_sigma: float = 0.0
    gusts: str = ""                   # "onset:duration:bias_x:bias_y;..." per-step m/s bias
    n_residual: int = 20
    var_gate_multiplier: float = 4.0

    # control weights
    lqr_q_diag: tuple = (4.0, 4.0, 1.0, 1.0, 2.0)
    lqr_r_diag: tuple = (1.0, 1.0, 1.0)
    lookahead: float = 1.5            # m, pure pursuit

    # planner
    library_size: int = 2401
    budget: int = 78
    traj_length: float = 5.0
    clearance: float = 0.75
    w_goal: float = 1.0
    w_collision: float = 10.0
    planner_range: float = 8.0        # m, cloud crop radius around the vehicle
    cloud_cap: int = 800              # max obstacle points fed to the scorer
    band_z_min: float = 0.4
    band_z_max: float = 2.6

    # depth evaluation
    eval_frames: int = 500
    eval_img_width: int = 640
    eval_img_height: int = 480
    eval_cam_fx: float = 480.0
    eval_frame_interval: int = 2
    eval_sway: float = 0.4            # m, lateral sway amplitude of the scripted path

    def noise_sigma(self):
        return (self.noise_pos, self.noise_pos, self.noise_vel,
                self.noise_vel, self.noise_yaw)

    def gust_list(self) -> list:
        return parse_gusts(self.gusts)

    def goal(self):
        return (self.world_length - self.goal_margin, 0.0)

    def bounds(self):
        return (0.0, self.world_length, -self.world_width / 2.0, self.world_width / 2.0)


def parse_gusts(spec: str) -> list:
    """Parse "onset:duration:bx:by;onset:duration:bx:by" into Gust objects."""
    out = []
    spec = spec.strip()
    if not spec:
        return out
    for chunk in spec.split(";"):
        parts = chunk.split(":")
        if len(parts) != 4:
            raise ConfigError(f"bad gust spec {chunk!r}, want onset:duration:bx:by")
        onset, duration, bx, by = (float(p) for p in parts)
        out.append(Gust(onset=onset, duration=duration, bias=(bx, by)))
    return out


def _parse_value(raw: str, target_type, key: str):
    raw = raw.strip()
    try:
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        if target_type is str:
            return raw
        if target_type is tuple:
            return tuple(float(p) for p in raw.split(",") if p.strip())
    except ValueError as e:
        raise ConfigError(f"cannot parse {key} = {raw!r}: {e}") from None
    raise ConfigError(f"unsupported config field type for {key}")


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Read a key=value config file; `overrides` wins over the file."""
    known = {f.name: f.type for f in fields(RunConfig)}
    type_map = {"int": int, "float": float, "str": str, "tuple": tuple}
    values = {}
    if path is not None:
        with open(path) as f:
            for lineno, line in enumerate(f, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key = value")
                key, raw = (part.strip() for part in line.split("=", 1))
                if key not in known:
                    raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
                ftype = known[key]
                if isinstance(ftype, str):
                    ftype = type_map.get(ftype, str)
                values[key] = _parse_value(raw, ftype, key)
    if overrides:
        for key, val in overrides.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = val
    cfg = RunConfig(**values)
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig):
    if cfg.prediction_mode not in ("multi", "single"):
        raise ConfigError(f"prediction_mode must be multi|single, got {cfg.prediction_mode!r}")
    if cfg.policy not in ("receding_horizon", "reactive_baseline", "straight_line"):
        raise ConfigError(f"unknown policy {cfg.policy!r}")
    if cfg.dt <= 0 or cfg.cruise_speed <= 0:
        raise ConfigError("dt and cruise_speed must be positive")
    if len(cfg.lqr_q_diag) != 5 or len(cfg.lqr_r_diag) != 3:
        raise ConfigError("lqr_q_diag needs 5 entries, lqr_r_diag needs 3")
    if cfg.frame_interval < 1:
        raise ConfigError("frame_interval must be >= 1")
    parse_gusts(cfg.gusts)
