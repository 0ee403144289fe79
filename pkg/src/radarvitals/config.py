"""Radar waveform and array constants.

All grids in the package derive from a single :class:`RadarConfig`. Angles are
handled in degrees at every public boundary; :func:`deg2rad` is the one place
where they are converted for internal trigonometry.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ._io import atomic_write_text

SPEED_OF_LIGHT = 299_792_458.0  # m/s

# File keys use the Table-I style symbol names.
_FILE_KEYS = {
    "lambda_max": "lambda_max",
    "T_c": "chirp_duration",
    "f_ADC": "adc_rate",
    "S": "sweep_rate",
    "T_s": "frame_period",
    "N_bar": "fast_time_samples",
    "G": "chirps_per_frame",
    "K": "receivers",
    "delta_theta": "angle_spacing",
    "M": "range_bins",
}


class ConfigError(ValueError):
    """Raised when a configuration value violates its contract."""


def deg2rad(angle_deg):
    return np.deg2rad(angle_deg)


@dataclass(frozen=True)
class RadarConfig:
    """MIMO FMCW radar parameters plus derived grid sizes.

    Parameters
    ----------
    lambda_max : float
        Maximal chirp wavelength [m].
    chirp_duration : float
        Chirp duration T_c [s].
    adc_rate : float
        ADC sampling rate f_ADC [Hz].
    sweep_rate : float
        Frequency sweep rate S [Hz/s].
    frame_period : float
        Frame period T_s [s].
    fast_time_samples : int
        Number of retained fast-time samples per chirp (the first N_bar ADC samples).
    chirps_per_frame : int
        Chirps G averaged into each frame.
    receivers : int
        Number of (virtual) receivers K.
    angle_spacing : float
        Angle grid spacing [deg]; must divide 180.
    range_bins : int, optional
        Number of range bins M. Defaults to ``fast_time_samples // 2``.
    """

    lambda_max: float = 3.9e-3
    chirp_duration: float = 57e-6
    adc_rate: float = 4e6
    sweep_rate: float = 70e12
    frame_period: float = 50e-3
    fast_time_samples: int = 200
    chirps_per_frame: int = 40
    receivers: int = 8
    angle_spacing: float = 1.0
    range_bins: int | None = field(default=None)

    def __post_init__(self):
        for name in ("lambda_max", "chirp_duration", "adc_rate", "sweep_rate",
                     "frame_period", "angle_spacing"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"{name} must be positive and finite, got {value!r}")
        for name in ("fast_time_samples", "chirps_per_frame", "receivers"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if self.range_bins is None:
            object.__setattr__(self, "range_bins", self.fast_time_samples // 2)
        if int(self.range_bins) != self.range_bins or self.range_bins < 1:
            raise ConfigError(f"range_bins must be a positive integer, got {self.range_bins!r}")
        object.__setattr__(self, "range_bins", int(self.range_bins))
        if self.range_bins > self.fast_time_samples:
            raise ConfigError(
                f"range_bins M={self.range_bins} exceeds fast_time_samples N_bar={self.fast_time_samples}")
        ratio = 180.0 / self.angle_spacing
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError(f"angle_spacing {self.angle_spacing} does not divide 180")

    # -- derived quantities -------------------------------------------------
    @property
    def bandwidth(self) -> float:
        """Swept bandwidth B = S * T_c [Hz]."""
        return self.sweep_rate * self.chirp_duration

    @property
    def frame_rate(self) -> float:
        return 1.0 / self.frame_period

    @property
    def adc_period(self) -> float:
        return 1.0 / self.adc_rate

    @property
    def range_resolution(self) -> float:
        """c / 2B [m]."""
        return SPEED_OF_LIGHT / (2.0 * self.bandwidth)

    @property
    def range_bin_spacing(self) -> float:
        """Distance between adjacent range-grid points, c f_ADC / (2 S N_bar) [m]."""
        return SPEED_OF_LIGHT * self.adc_rate / (2.0 * self.sweep_rate * self.fast_time_samples)

    @property
    def d_min(self) -> float:
        return self.range_bin_spacing

    @property
    def d_max(self) -> float:
        return self.range_bin_spacing * (self.range_bins - 1)

    @property
    def angle_bins(self) -> int:
        return int(round(180.0 / self.angle_spacing))

    def distance_to_beat(self, distance):
        """Beat frequency 2 S d / c [Hz] for a radial distance [m]."""
        return 2.0 * self.sweep_rate * np.asarray(distance, dtype=float) / SPEED_OF_LIGHT

    def beat_to_distance(self, beat):
        return SPEED_OF_LIGHT * np.asarray(beat, dtype=float) / (2.0 * self.sweep_rate)

    def nearest_range_bin(self, distance: float) -> int:
        return int(round(distance / self.range_bin_spacing))

    def nearest_angle_bin(self, angle_deg: float) -> int:
        return int(round((angle_deg + 90.0) / self.angle_spacing))

    # -- (de)serialization --------------------------------------------------
    def to_dict(self) -> dict:
        values = asdict(self)
        return {key: values[attr] for key, attr in _FILE_KEYS.items()}

    @classmethod
    def from_dict(cls, data: dict) -> "RadarConfig":
        unknown = set(data) - set(_FILE_KEYS)
        if unknown:
            raise ConfigError(f"unknown radar keys: {sorted(unknown)}")
        kwargs = {_FILE_KEYS[key]: value for key, value in data.items()}
        return cls(**kwargs)

    def save(self, path) -> None:
        atomic_write_text(path, json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "RadarConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(data)


def build_radar_config(**raw) -> RadarConfig:
    """Validate raw Table-I style parameters (file keys or attribute names)."""
    kwargs = {_FILE_KEYS.get(key, key): value for key, value in raw.items()}
    try:
        return RadarConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def table1_config(receivers: int = 8) -> RadarConfig:
    """Operating point of the IWR1443 setup; 8 virtual receivers for multi-person work."""
    return RadarConfig(receivers=receivers)
