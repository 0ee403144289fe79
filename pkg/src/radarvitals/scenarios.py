"""Preset scenes used by the acceptance suite and the ``simulate --preset`` command.

Reflectivities are expressed on a scale where a human has ``|x| = 0.1``; with
the fixed regularization weight gamma = 100 this puts the solver threshold
between the integrated noise level and the integrated human echo.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RadarConfig
from .simulator import (STATIC_CLUTTER, Scene, TargetSpec, drifting_human, human_vibration)

HUMAN_AMPLITUDE = 0.1
CLUTTER_RATIO = 10.0

C3_POSITIONS = ((0.80, -10.0), (0.80, 10.0), (0.85, -15.0))
C3_CLUTTER = ((1.00, 0.0), (1.20, 25.0))
C4_POSITIONS = ((1.30, -30.0), (1.30, 30.0), (1.80, 0.0))
C4_CLUTTER = ((1.00, 15.0), (1.60, -20.0))


def noise_sigma_for_snr(amplitude: float, snr_db: float, chirps: int) -> float:
    """Per-chirp noise std giving ``snr_db`` per sample after averaging ``chirps`` chirps."""
    return abs(amplitude) * np.sqrt(chirps) * 10 ** (-snr_db / 20)


def _phase(rng) -> complex:
    return np.exp(2j * np.pi * rng.uniform())


def _clutter(rng, positions, amplitude):
    return [TargetSpec(d, a, CLUTTER_RATIO * amplitude * _phase(rng), kind=STATIC_CLUTTER)
            for d, a in positions]


def c3_scene(seed: int, config: RadarConfig, duration: float = 5.0, snr_db: float = 0.0,
             amplitude: float = HUMAN_AMPLITUDE) -> Scene:
    """Three closely spaced humans with fixed random rates and two strong static reflectors."""
    rng = np.random.default_rng(seed)
    targets = []
    for d, a in C3_POSITIONS:
        rr, hr = rng.uniform(12, 20), rng.uniform(60, 90)
        targets.append(TargetSpec(d, a, amplitude * _phase(rng), human_vibration(rr, hr)))
    targets += _clutter(rng, C3_CLUTTER, amplitude)
    sigma = noise_sigma_for_snr(amplitude, snr_db, config.chirps_per_frame)
    return Scene(tuple(targets), noise_sigma=sigma, duration=duration, seed=seed)


def c4_scene(seed: int, config: RadarConfig, duration: float = 120.0, snr_db: float = 0.0,
             amplitude: float = HUMAN_AMPLITUDE) -> Scene:
    """Three separated humans whose RR (12-20 bpm) and HR (60-90 bpm) drift slowly."""
    rng = np.random.default_rng(seed)
    targets = []
    for d, a in C4_POSITIONS:
        rr = rng.uniform(14, 18)
        hr = rng.uniform(66, 84)
        rr_dev = rng.uniform(0.3, 0.9) * min(rr - 12, 20 - rr)
        hr_dev = rng.uniform(0.3, 0.9) * min(hr - 60, 90 - hr)
        vib = drifting_human(rr, hr, rr_dev, hr_dev,
                             rr_period=rng.uniform(60, 180), hr_period=rng.uniform(60, 180),
                             phases=rng.uniform(0, 2 * np.pi, 4))
        targets.append(TargetSpec(d, a, amplitude * _phase(rng), vib))
    targets += _clutter(rng, C4_CLUTTER, amplitude)
    sigma = noise_sigma_for_snr(amplitude, snr_db, config.chirps_per_frame)
    return Scene(tuple(targets), noise_sigma=sigma, duration=duration, seed=seed)


@dataclass(frozen=True, eq=False)
class HarmonicTrial:
    vibration: np.ndarray  # rad
    rr_bpm: int
    hr_bpm: int
    harmonic_bpm: int


def harmonic_masking_trial(rng, frame_rate: float = 20.0, window: float = 30.0,
                           phase_noise: float = 0.05, harmonic_ratio: float = 2.0,
                           heart_band_bpm=(50, 100), min_gap: int = 10) -> HarmonicTrial:
    """Phase track whose 3rd respiration harmonic outweighs the heartbeat in the heart band.

    Tones are zero-phase cosines on integer-bpm rates. The respiration rate is
    drawn so that its 3rd harmonic lies inside the heart band, and the heart
    rate is at least ``min_gap`` bpm from that harmonic and 2 bpm from every
    other multiple of the respiration rate.
    """
    lo, hi = heart_band_bpm
    rr_choices = [r for r in range(6, 31) if lo <= 3 * r <= hi]
    rr = int(rng.choice(rr_choices))
    hr_choices = [h for h in range(lo, hi + 1)
                  if abs(h - 3 * rr) >= min_gap
                  and all(abs(h - k * rr) >= 2 for k in range(2, hi // rr + 2))]
    hr = int(rng.choice(hr_choices))
    t = np.arange(int(round(window * frame_rate))) / frame_rate
    a_r = rng.uniform(0.5, 1.5)
    a_h = rng.uniform(0.05, 0.15)
    v = (a_r * np.cos(2 * np.pi * rr / 60 * t)
         + harmonic_ratio * a_h * np.cos(2 * np.pi * 3 * rr / 60 * t)
         + a_h * np.cos(2 * np.pi * hr / 60 * t)
         + rng.normal(0.0, phase_noise, t.size))
    return HarmonicTrial(v, rr, hr, 3 * rr)
