"""Scenario files: the same flat ``key = value`` format as run configs."""
from __future__ import annotations

from dataclasses import fields

import numpy as np

from .config import ConfigError, _parse_value
from .ins import ImuNoiseParams
from .radar import RadarNoiseParams
from .sim import Scenario

# scenario keys handled specially (nested parameter bundles)
_NOISE_KEYS = {
    "radar_sigma_range": ("radar_noise", "sigma_range"),
    "radar_sigma_azimuth": ("radar_noise", "sigma_azimuth"),
    "radar_sigma_elevation": ("radar_noise", "sigma_elevation"),
    "radar_sigma_doppler": ("radar_noise", "sigma_doppler"),
    "imu_gyro_noise": ("imu_noise", "gyro_noise"),
    "imu_accel_noise": ("imu_noise", "accel_noise"),
    "imu_gyro_bias_walk": ("imu_noise", "gyro_bias_walk"),
    "imu_accel_bias_walk": ("imu_noise", "accel_bias_walk"),
    "gravity": ("imu_noise", "gravity_mag"),
}


def parse_scenario_text(text: str) -> Scenario:
    s = Scenario()
    simple = {
        f.name: f.type
        for f in fields(Scenario)
        if f.name not in ("radar_noise", "imu_noise")
    }
    py_types = {"float": float, "int": int, "bool": bool, "str": str}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (p.strip() for p in stripped.split("=", 1))
        name = key.replace(".", "_").replace("-", "_")
        if name in _NOISE_KEYS:
            attr, sub = _NOISE_KEYS[name]
            target = getattr(s, attr)
            if sub == "gravity_mag":
                target.gravity = np.array([0.0, 0.0, -float(raw)])
            else:
                setattr(target, sub, float(raw))
        elif name in simple:
            ftype = simple[name]
            if isinstance(ftype, str):
                ftype = py_types.get(ftype, np.ndarray)
            setattr(s, name, _parse_value(ftype, raw, key))
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    return s


def load_scenario(path) -> Scenario:
    with open(path) as f:
        return parse_scenario_text(f.read())
