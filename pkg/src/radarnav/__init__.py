"""Tightly-coupled 4D radar-inertial navigation.

An error-state Kalman filter over an inertial backbone, updated per scan by
radar Doppler residuals and point-to-distribution matching against an
incremental local map, with optional keyframe-to-prior-map localization.
Includes a deterministic synthetic flight simulator and an evaluation CLI.
"""

from .config import Config, ConfigError, load_config
from .ins import ImuNoiseParams, ImuSample, InitStds, NavState
from .localmap import LocalMap
from .maploc import Keyframe, KeyframeParams, PriorMap
from .matching import MatchParams, NeighborhoodGaussian
from .pipeline import Pipeline, PipelineResult, run_pipeline
from .radar import RadarNoiseParams, RadarPoint, RadarScan
from .sim import Scenario, simulate

__all__ = [
    "Config",
    "ConfigError",
    "ImuNoiseParams",
    "ImuSample",
    "InitStds",
    "Keyframe",
    "KeyframeParams",
    "LocalMap",
    "MatchParams",
    "NavState",
    "NeighborhoodGaussian",
    "Pipeline",
    "PipelineResult",
    "PriorMap",
    "RadarNoiseParams",
    "RadarPoint",
    "RadarScan",
    "Scenario",
    "load_config",
    "run_pipeline",
    "simulate",
]

__version__ = "0.1.0"
