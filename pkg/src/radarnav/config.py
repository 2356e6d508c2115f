"""Run configuration: a flat ``key = value`` file.

Unknown keys fail fast. Vector values are space-separated triples; the
extrinsic rotation is given as a rotation vector in radians.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from . import so3
from .ins import ImuNoiseParams, InitStds
from .matching import MatchParams
from .maploc import KeyframeParams
from .radar import RadarNoiseParams

MODES = ("full", "doppler-only", "p2d-only", "p2p-only")


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    gravity: float = 9.81

    imu_gyro_noise: float = 2e-3
    imu_accel_noise: float = 2e-2
    imu_gyro_bias_walk: float = 1e-5
    imu_accel_bias_walk: float = 1e-4

    init_att_std: float = 0.02
    init_pos_std: float = 0.01
    init_vel_std: float = 0.1
    init_gyro_bias_std: float = 0.01
    init_accel_bias_std: float = 0.1
    init_ext_att_std: float = 1e-8
    init_ext_pos_std: float = 1e-8
    init_window: float = 0.5  # s of IMU data assumed static
    init_min_samples: int = 50
    init_from_gt: bool = False

    radar_sigma_range: float = 0.1
    radar_sigma_azimuth: float = np.deg2rad(0.5)
    radar_sigma_elevation: float = np.deg2rad(0.5)
    radar_sigma_doppler: float = 0.1

    ext_rotation: np.ndarray = field(default_factory=lambda: np.zeros(3))  # rotvec, rad
    ext_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    estimate_extrinsics: bool = False

    doppler_gate_sigma: float = 3.0
    doppler_gate_use_state_cov: bool = True

    ransac_threshold: float = 0.2
    ransac_min_iters: int = 17
    ransac_max_iters: int = 200
    ransac_confidence: float = 0.99
    ransac_seed: int = 0

    snr_percentile: float = 5.0

    match_k: int = 10
    match_assoc_radius: float = 5.0
    match_inflation: float = 2.0
    match_epsilon: float = 1e-4
    match_chi2: float = 7.815
    match_max_iterations: int = 5
    match_convergence_tol: float = 1e-4
    match_min_matches: int = 10
    match_joseph_form: bool = False
    match_exact_prior_jacobian: bool = False
    # registration is skipped while stationary: it carries no motion
    # information there and its neighborhood centroids bias the pose
    match_static_velocity: float = 0.05  # m/s
    match_static_omega: float = 0.02  # rad/s

    map_radius: float = 300.0
    map_hysteresis: float = 50.0
    map_voxel_dedup: bool = True
    map_voxel_size: float = 0.5

    keyframe_frames: int = 10
    keyframe_voxel_size: float = 1.0
    keyframe_dist_threshold: float = 1.0

    mode: str = "full"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")

    # ---- derived parameter bundles -----------------------------------

    def imu_noise(self) -> ImuNoiseParams:
        return ImuNoiseParams(
            self.imu_gyro_noise,
            self.imu_accel_noise,
            self.imu_gyro_bias_walk,
            self.imu_accel_bias_walk,
            np.array([0.0, 0.0, -self.gravity]),
        )

    def radar_noise(self) -> RadarNoiseParams:
        return RadarNoiseParams(
            self.radar_sigma_range,
            self.radar_sigma_azimuth,
            self.radar_sigma_elevation,
            self.radar_sigma_doppler,
        )

    def init_stds(self) -> InitStds:
        return InitStds(
            self.init_att_std,
            self.init_pos_std,
            self.init_vel_std,
            self.init_gyro_bias_std,
            self.init_accel_bias_std,
            self.init_ext_att_std,
            self.init_ext_pos_std,
        )

    def match_params(self) -> MatchParams:
        return MatchParams(
            k=self.match_k,
            assoc_radius=self.match_assoc_radius,
            inflation=self.match_inflation,
            epsilon=self.match_epsilon,
            chi2_threshold=self.match_chi2,
            max_iterations=self.match_max_iterations,
            convergence_tol=self.match_convergence_tol,
            min_matches=self.match_min_matches,
            joseph_form=self.match_joseph_form,
            exact_prior_jacobian=self.match_exact_prior_jacobian,
            point_to_point=(self.mode == "p2p-only"),
        )

    def keyframe_params(self) -> KeyframeParams:
        return KeyframeParams(
            self.keyframe_frames, self.keyframe_voxel_size, self.keyframe_dist_threshold
        )

    def ext_rot_matrix(self) -> np.ndarray:
        return so3.exp_so3(self.ext_rotation)


def _parse_value(field_type, raw: str, key: str):
    raw = raw.strip()
    if field_type is bool:
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected boolean, got {raw!r}")
    if field_type is int:
        return int(raw)
    if field_type is float:
        return float(raw)
    if field_type is str:
        return raw
    # vector
    vals = [float(v) for v in raw.split()]
    if len(vals) != 3:
        raise ConfigError(f"{key}: expected 3 values, got {len(vals)}")
    return np.array(vals)


def parse_config_text(text: str, base: Config | None = None) -> Config:
    cfg = base if base is not None else Config()
    types = {f.name: f.type for f in fields(Config)}
    py_types = {"float": float, "int": int, "bool": bool, "str": str, "np.ndarray": np.ndarray}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in stripped.split("=", 1))
        name = key.replace(".", "_").replace("-", "_")
        if name not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        ftype = types[name]
        if isinstance(ftype, str):
            ftype = py_types.get(ftype, np.ndarray)
        setattr(cfg, name, _parse_value(ftype, raw, key))
    if cfg.mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {cfg.mode!r}")
    return cfg


def load_config(path, base: Config | None = None) -> Config:
    with open(path) as f:
        return parse_config_text(f.read(), base)
