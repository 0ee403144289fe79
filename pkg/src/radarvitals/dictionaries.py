"""Range, angle and vital-frequency dictionaries.

Index conventions are zero-based throughout: fast-time sample ``n = 0..N_bar-1``,
receiver ``k = 0..K-1`` and frame ``l = 0..L-1`` (so frame ``l`` sits at time
``l * T_s``). The range dictionary therefore has an all-ones DC column and the
rendered cube of an on-grid target equals ``A @ X @ B`` exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RadarConfig, deg2rad

BPM_PER_HZ = 60.0
# Absorbs float error when a band edge lands exactly on a grid point.
_GRID_EPS = 1e-9


class DictionaryError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RangeDictionary:
    matrix: np.ndarray  # N_bar x M
    bin_distances: np.ndarray  # m
    bin_frequencies: np.ndarray  # Hz

    @property
    def shape(self):
        return self.matrix.shape


@dataclass(frozen=True, eq=False)
class AngleDictionary:
    matrix: np.ndarray  # P x K, B(p, k)
    grid_angles: np.ndarray  # deg

    @property
    def receiver_major(self) -> np.ndarray:
        """The same steering matrix stored K x P."""
        return self.matrix.T


@dataclass(frozen=True, eq=False)
class VitalDictionary:
    matrix: np.ndarray  # L x Q_band, real
    atom_frequencies: np.ndarray  # Hz
    band: tuple[float, float]  # Hz
    frame_rate: float

    @property
    def atom_bpm(self) -> np.ndarray:
        return self.atom_frequencies * BPM_PER_HZ

    @property
    def grid_step(self) -> float:
        """Dense-grid spacing f_s / Q in Hz (1 bpm)."""
        return self.frame_rate / dense_grid_size(self.frame_rate)

    def __len__(self):
        return self.matrix.shape[1]


@dataclass(frozen=True, eq=False)
class HarmonicSplit:
    fundamental: float  # Hz
    interferers: np.ndarray  # bpm
    clean: np.ndarray  # bpm
    interferer_matrix: np.ndarray  # L x Q_R'
    clean_matrix: np.ndarray  # L x Q_H'


def build_range_dictionary(config: RadarConfig) -> RangeDictionary:
    n = np.arange(config.fast_time_samples)
    i_m = np.arange(config.range_bins)
    matrix = np.exp(2j * np.pi * np.outer(n, i_m) / config.fast_time_samples)
    freqs = config.adc_rate * i_m / config.fast_time_samples
    return RangeDictionary(matrix, config.beat_to_distance(freqs), freqs)


def build_angle_dictionary(config: RadarConfig) -> AngleDictionary:
    angles = -90.0 + np.arange(config.angle_bins) * config.angle_spacing
    k = np.arange(config.receivers)
    matrix = np.exp(1j * np.pi * np.outer(np.sin(deg2rad(angles)), k))
    return AngleDictionary(matrix, angles)


def dense_grid_size(frame_rate: float) -> int:
    """Q = 60 f_s points on [0, f_s), i.e. 1 bpm spacing."""
    q = BPM_PER_HZ * frame_rate
    if abs(q - round(q)) > 1e-6 or round(q) < 2:
        raise DictionaryError(f"60*f_s must be a positive integer, got {q}")
    return int(round(q))


def band_grid(band, frame_rate: float) -> np.ndarray:
    """Dense-grid frequencies [Hz] inside the closed band, below f_s/2."""
    lo, hi = float(band[0]), float(band[1])
    if not lo <= hi:
        raise DictionaryError(f"invalid band {band}")
    if lo < 0 or lo >= frame_rate / 2:
        raise DictionaryError(f"band {band} outside [0, f_s/2)")
    q = dense_grid_size(frame_rate)
    step = frame_rate / q
    h_lo = max(int(np.ceil(lo / step - _GRID_EPS)), 0)
    h_hi = min(int(np.floor(hi / step + _GRID_EPS)), q // 2 - 1)
    if h_hi < h_lo:
        raise DictionaryError(f"band {band} Hz contains no grid frequency")
    return np.arange(h_lo, h_hi + 1) * step


def cosine_atoms(freqs, frame_rate: float, length: int) -> np.ndarray:
    t = np.arange(length) / frame_rate
    return np.cos(2 * np.pi * np.outer(t, np.asarray(freqs, dtype=float)))


def build_vital_dictionary(band, frame_rate: float, length: int) -> VitalDictionary:
    """Cosine dictionary over the 1-bpm grid points inside ``band`` (Hz)."""
    if length < 1:
        raise DictionaryError("length must be >= 1")
    freqs = band_grid(band, frame_rate)
    return VitalDictionary(cosine_atoms(freqs, frame_rate, length), freqs,
                           (float(band[0]), float(band[1])), float(frame_rate))


def split_harmonics(f_r_hat: float, heart: VitalDictionary) -> HarmonicSplit:
    """Partition heart atoms into respiration-harmonic interferers and clean atoms.

    An atom is an interferer when it is the grid point nearest to ``i * f_r_hat``
    for some integer ``i >= 2`` with the multiple inside the heart band.
    """
    if not f_r_hat > 0:
        raise DictionaryError(f"fundamental must be positive, got {f_r_hat}")
    freqs = heart.atom_frequencies
    step = heart.grid_step
    lo, hi = heart.band
    is_interferer = np.zeros(len(freqs), dtype=bool)
    i_lo = max(2, int(np.ceil(lo / f_r_hat - _GRID_EPS)))
    i_hi = int(np.floor(hi / f_r_hat + _GRID_EPS))
    for i in range(i_lo, i_hi + 1):
        target = i * f_r_hat
        q = int(np.argmin(np.abs(freqs - target)))
        if abs(freqs[q] - target) <= step / 2 + _GRID_EPS:
            is_interferer[q] = True
    if is_interferer.all():
        raise DictionaryError(
            f"every heart atom is a harmonic of {f_r_hat * BPM_PER_HZ:.3f} bpm")
    return HarmonicSplit(
        fundamental=float(f_r_hat),
        interferers=freqs[is_interferer] * BPM_PER_HZ,
        clean=freqs[~is_interferer] * BPM_PER_HZ,
        interferer_matrix=heart.matrix[:, is_interferer],
        clean_matrix=heart.matrix[:, ~is_interferer],
    )
