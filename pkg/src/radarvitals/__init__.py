"""Multi-person FMCW radar localization and vital-sign monitoring."""

from .config import RadarConfig, build_radar_config, table1_config
from .dictionaries import (build_angle_dictionary, build_range_dictionary,
                           build_vital_dictionary, split_harmonics)
from .evaluation import aecdf, reference_rates, rmse_report
from .localization import (DetectionSettings, SolverSettings, angle_fft_map, compute_lipschitz,
                           detect_support, localize, ralu_jsr, range_angle_map)
from .simulator import Scene, TargetSpec, VibrationSpec, render_cube, take_inphase
from .vitals import RefinementParams, Schedule, evsdr_estimate, fft_baseline, monitor

__version__ = "0.1.0"

__all__ = [
    "RadarConfig", "build_radar_config", "table1_config",
    "build_angle_dictionary", "build_range_dictionary", "build_vital_dictionary",
    "split_harmonics",
    "aecdf", "reference_rates", "rmse_report",
    "DetectionSettings", "SolverSettings", "angle_fft_map", "compute_lipschitz",
    "detect_support", "localize", "ralu_jsr", "range_angle_map",
    "Scene", "TargetSpec", "VibrationSpec", "render_cube", "take_inphase",
    "RefinementParams", "Schedule", "evsdr_estimate", "fft_baseline", "monitor",
]
