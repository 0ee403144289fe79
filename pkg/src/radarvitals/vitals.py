"""Vital Doppler extraction and continuous heart/respiration rate estimation."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from ._io import atomic_write_text
from .dictionaries import (BPM_PER_HZ, AngleDictionary, DictionaryError, RangeDictionary,
                           VitalDictionary, build_vital_dictionary, split_harmonics)
from .localization import REST_HEARTBEAT_BAND, REST_RESPIRATION_BAND, Support, SupportEntry
from .simulator import FrameCube

log = logging.getLogger(__name__)


class DemodulationError(ValueError):
    pass


class MonitorError(ValueError):
    pass


# -- Doppler extraction ------------------------------------------------------

def beamform_support(cube: FrameCube, entry: SupportEntry, A: RangeDictionary,
                     B: AngleDictionary) -> np.ndarray:
    """Complex slow-time track x[l] = A_s^H Y_l B_s^H / (N_bar K)."""
    M, P = A.matrix.shape[1], B.matrix.shape[0]
    if not (0 <= entry.m < M and 0 <= entry.p < P):
        raise IndexError(f"support index ({entry.m}, {entry.p}) outside {M} x {P} grid")
    a = A.matrix[:, entry.m]
    b = B.matrix[entry.p]
    n_bar, K = cube.samples.shape[:2]
    return np.einsum("n,nkl,k->l", a.conj(), cube.samples, b.conj()) / (n_bar * K)


def unwrap_phase(angles: np.ndarray) -> np.ndarray:
    """Add -2*pi*sign(d) cumulatively wherever a consecutive jump |d| exceeds pi."""
    angles = np.asarray(angles, dtype=float)
    d = np.diff(angles)
    corr = np.where(np.abs(d) > np.pi, -2 * np.pi * np.sign(d), 0.0)
    out = angles.copy()
    out[1:] += np.cumsum(corr)
    return out


def demodulate(track: np.ndarray, *, remove_mean: bool = True) -> np.ndarray:
    """Arctangent demodulation with unwrapping; radians, mean removed."""
    track = np.asarray(track)
    zero = np.flatnonzero(np.abs(track) == 0)
    if zero.size:
        raise DemodulationError(f"zero-magnitude sample at frame {int(zero[0])}")
    v = unwrap_phase(np.angle(track))
    return v - v.mean() if remove_mean else v


# -- rate estimation ---------------------------------------------------------

@dataclass(frozen=True)
class RateEstimate:
    f_r: float  # bpm
    f_h: float  # bpm
    timestamp: float = 0.0  # s
    raw_f_r: float | None = None
    raw_f_h: float | None = None
    refined: bool = False
    low_confidence: bool = False
    ls_fallback: bool = False
    interferers: tuple[float, ...] = ()


def _argmax_abs(values: np.ndarray) -> int:
    # np.argmax returns the first maximum, i.e. the lowest-frequency atom on ties.
    return int(np.argmax(np.abs(values)))


@dataclass(eq=False)
class EvsdrDetail:
    """Intermediate vectors of one E-VSDR call (for diagnostics and tests)."""

    residual: np.ndarray  # after removing the selected respiration atom
    cleaned: np.ndarray  # after removing respiration harmonics
    respiration_atom: np.ndarray
    harmonic_matrix: np.ndarray
    estimate: RateEstimate


def evsdr(v: np.ndarray, resp: VitalDictionary, heart: VitalDictionary,
          timestamp: float = 0.0) -> EvsdrDetail:
    v = np.asarray(v, dtype=float)
    v = v - v.mean()
    if resp.matrix.shape[0] != v.size or heart.matrix.shape[0] != v.size:
        raise DictionaryError("dictionary length does not match the vibration track")
    s_r = _argmax_abs(resp.matrix.T @ v)
    f_r = resp.atom_frequencies[s_r]
    d = resp.matrix[:, s_r]
    a_hat = (d @ v) / (d @ d)
    v1 = v - d * a_hat

    split = split_harmonics(f_r, heart)
    D = split.interferer_matrix
    fallback = False
    if D.shape[1]:
        gram = D.T @ D
        if np.linalg.matrix_rank(gram) < D.shape[1]:
            fallback = True
            coeffs = (D.T @ v1) / np.einsum("lq,lq->q", D, D)
        else:
            coeffs = np.linalg.solve(gram, D.T @ v1)
        v2 = v1 - D @ coeffs
    else:
        v2 = v1
    s_h = _argmax_abs(split.clean_matrix.T @ v2)
    f_h = split.clean[s_h]
    est = RateEstimate(f_r=float(f_r * BPM_PER_HZ), f_h=float(f_h), timestamp=timestamp,
                       raw_f_r=float(f_r * BPM_PER_HZ), raw_f_h=float(f_h),
                       ls_fallback=fallback, interferers=tuple(split.interferers.tolist()))
    return EvsdrDetail(v1, v2, d, D, est)


def evsdr_estimate(v: np.ndarray, resp: VitalDictionary, heart: VitalDictionary,
                   timestamp: float = 0.0) -> RateEstimate:
    """Harmonics-resilient dictionary estimate of respiration and heart rate [bpm]."""
    return evsdr(v, resp, heart, timestamp).estimate


def fft_baseline(v: np.ndarray, frame_rate: float,
                 resp_band=REST_RESPIRATION_BAND, heart_band=REST_HEARTBEAT_BAND,
                 timestamp: float = 0.0, confidence_ratio: float = 3.0) -> RateEstimate:
    """Per-band peak of the magnitude spectrum zero-padded to 1 bpm resolution.

    Bands are in Hz. The estimate is flagged low-confidence when a band peak is
    below ``confidence_ratio`` times that band's median magnitude.
    """
    v = np.asarray(v, dtype=float)
    v = v - v.mean()
    q = int(round(BPM_PER_HZ * frame_rate))
    nfft = q * int(np.ceil(v.size / q))
    spec = np.abs(np.fft.rfft(v, nfft))
    freqs = np.fft.rfftfreq(nfft, 1.0 / frame_rate)
    picks, low = [], False
    for lo, hi in (resp_band, heart_band):
        sel = np.flatnonzero((freqs >= lo - 1e-9) & (freqs <= hi + 1e-9))
        if sel.size == 0:
            raise DictionaryError(f"band [{lo}, {hi}] Hz has no spectral bin")
        i = int(np.argmax(spec[sel]))
        band_spec = spec[sel]
        if band_spec[i] < confidence_ratio * np.median(band_spec):
            low = True
        picks.append(freqs[sel[i]] * BPM_PER_HZ)
    return RateEstimate(f_r=float(picks[0]), f_h=float(picks[1]), timestamp=timestamp,
                        raw_f_r=float(picks[0]), raw_f_h=float(picks[1]), low_confidence=low)


# -- refinement --------------------------------------------------------------

@dataclass(frozen=True)
class RefinementParams:
    t_ref: float = 5.0  # s
    t_avg_h: float = 3.0  # s
    t_avg_r: float = 5.0  # s
    eps_r: float = 5.0  # bpm
    eps_h: float = 5.0  # bpm
    rewrite_history: bool = False
    clip_bpm: tuple[float, float] = (REST_RESPIRATION_BAND[0] * BPM_PER_HZ,
                                     REST_HEARTBEAT_BAND[1] * BPM_PER_HZ)


@dataclass
class RefinementState:
    params: RefinementParams = field(default_factory=RefinementParams)
    times: list[float] = field(default_factory=list)
    f_r: list[float] = field(default_factory=list)
    f_h: list[float] = field(default_factory=list)
    resp_band_bpm: tuple[float, float] = (REST_RESPIRATION_BAND[0] * BPM_PER_HZ,
                                          REST_RESPIRATION_BAND[1] * BPM_PER_HZ)
    heart_band_bpm: tuple[float, float] = (REST_HEARTBEAT_BAND[0] * BPM_PER_HZ,
                                           REST_HEARTBEAT_BAND[1] * BPM_PER_HZ)
    median_applied: bool = False


def _adaptive_band(center: float, eps: float, clip) -> tuple[float, float]:
    lo, hi = max(center - eps, clip[0]), min(center + eps, clip[1])
    if hi < lo:
        lo = hi = min(max(center, clip[0]), clip[1])
    return (lo, hi)


def refine(estimate: RateEstimate, state: RefinementState, t: float):
    """One refinement step at monitoring time ``t`` (seconds since the first estimate).

    Returns the refined estimate; ``state`` is updated in place and also returned.
    """
    p = state.params
    if state.times and t < state.times[-1]:
        raise MonitorError(f"time {t} precedes the last refinement at {state.times[-1]}")
    state.times.append(t)
    state.f_r.append(estimate.f_r)
    state.f_h.append(estimate.f_h)
    eps_t = 1e-9
    if t < p.t_ref - eps_t:
        return replace(estimate, refined=False), state

    if not state.median_applied:
        f_r = float(np.median(state.f_r))
        f_h = float(np.median(state.f_h))
        state.median_applied = True
        if p.rewrite_history:
            state.f_r = [f_r] * len(state.f_r)
            state.f_h = [f_h] * len(state.f_h)
    else:
        times = np.asarray(state.times)
        sel_h = times > t - p.t_avg_h - eps_t
        sel_r = times > t - p.t_avg_r - eps_t
        sel_h[-1] = sel_r[-1] = True
        f_h = float(np.mean(np.asarray(state.f_h)[sel_h]))
        f_r = float(np.mean(np.asarray(state.f_r)[sel_r]))
    state.resp_band_bpm = _adaptive_band(f_r, p.eps_r, p.clip_bpm)
    state.heart_band_bpm = _adaptive_band(f_h, p.eps_h, p.clip_bpm)
    return replace(estimate, f_r=f_r, f_h=f_h, refined=True), state


# -- continuous monitoring ---------------------------------------------------

@dataclass(frozen=True)
class Schedule:
    t_win: float = 30.0  # s
    t_int: float = 0.05  # s
    t_loc: float = 5.0  # s

    def hop_frames(self, frame_rate: float) -> int:
        hop = self.t_int * frame_rate
        if abs(hop - round(hop)) > 1e-6 or round(hop) < 1:
            raise MonitorError(f"T_int={self.t_int} s is not a whole number of frames")
        return int(round(hop))

    def window_frames(self, frame_rate: float) -> int:
        n = self.t_win * frame_rate
        if abs(n - round(n)) > 1e-6 or round(n) < 2:
            raise MonitorError(f"T_win={self.t_win} s is not a whole number of frames")
        return int(round(n))

    def n_estimates(self, n_frames: int, frame_rate: float) -> int:
        win = self.window_frames(frame_rate)
        if n_frames < win:
            return 0
        return (n_frames - win) // self.hop_frames(frame_rate) + 1


@dataclass(eq=False)
class RateTrack:
    subject: int
    times: np.ndarray  # s, end of each window
    f_r: np.ndarray  # bpm, refined
    f_h: np.ndarray
    raw_f_r: np.ndarray
    raw_f_h: np.ndarray
    resp_bands: np.ndarray  # (n, 2) bpm, band used for each estimate
    heart_bands: np.ndarray
    position: tuple[float, float] | None = None  # (distance m, angle deg)

    def __len__(self):
        return self.times.size


class _DictionaryCache:
    def __init__(self, frame_rate: float, length: int):
        self.frame_rate = frame_rate
        self.length = length
        self._get = lru_cache(maxsize=512)(self._build)

    def _build(self, lo_bpm: float, hi_bpm: float) -> VitalDictionary:
        return build_vital_dictionary((lo_bpm / BPM_PER_HZ, hi_bpm / BPM_PER_HZ),
                                      self.frame_rate, self.length)

    def __call__(self, band_bpm) -> VitalDictionary:
        return self._get(round(band_bpm[0], 9), round(band_bpm[1], 9))


def estimate_windows(phase_track: np.ndarray, frame_rate: float, schedule: Schedule,
                     refinement: RefinementParams | None = RefinementParams(),
                     method: str = "evsdr",
                     resp_band=REST_RESPIRATION_BAND, heart_band=REST_HEARTBEAT_BAND,
                     subject: int = 0) -> RateTrack:
    """Sliding-window estimation over a complex slow-time track of one subject.

    ``refinement=None`` disables the refinement stages (fixed bands throughout).
    ``method`` is ``"evsdr"`` or ``"fft"``.
    """
    win = schedule.window_frames(frame_rate)
    hop = schedule.hop_frames(frame_rate)
    n = schedule.n_estimates(len(phase_track), frame_rate)
    if n == 0:
        raise MonitorError(
            f"stream of {len(phase_track) / frame_rate:.2f} s is shorter than T_win={schedule.t_win} s")
    state = RefinementState(params=refinement or RefinementParams())
    state.resp_band_bpm = (resp_band[0] * BPM_PER_HZ, resp_band[1] * BPM_PER_HZ)
    state.heart_band_bpm = (heart_band[0] * BPM_PER_HZ, heart_band[1] * BPM_PER_HZ)
    dictionaries = _DictionaryCache(frame_rate, win)
    out = {k: np.empty(n) for k in ("t", "fr", "fh", "rfr", "rfh")}
    rb, hb = np.empty((n, 2)), np.empty((n, 2))
    for i in range(n):
        start = i * hop
        t_abs = (start + win) / frame_rate
        v = demodulate(phase_track[start:start + win])
        rb[i], hb[i] = state.resp_band_bpm, state.heart_band_bpm
        if method == "evsdr":
            est = evsdr_estimate(v, dictionaries(state.resp_band_bpm),
                                 dictionaries(state.heart_band_bpm), t_abs)
        elif method == "fft":
            est = fft_baseline(v, frame_rate,
                               tuple(b / BPM_PER_HZ for b in state.resp_band_bpm),
                               tuple(b / BPM_PER_HZ for b in state.heart_band_bpm), t_abs)
        else:
            raise ValueError(f"unknown method {method!r}")
        if refinement is not None:
            est, state = refine(est, state, t_abs - schedule.t_win)
        out["t"][i], out["fr"][i], out["fh"][i] = t_abs, est.f_r, est.f_h
        out["rfr"][i], out["rfh"][i] = est.raw_f_r, est.raw_f_h
    return RateTrack(subject, out["t"], out["fr"], out["fh"], out["rfr"], out["rfh"], rb, hb)


def monitor(cube: FrameCube, support: Support, A: RangeDictionary, B: AngleDictionary,
            schedule: Schedule = Schedule(),
            refinement: RefinementParams | None = RefinementParams(),
            method: str = "evsdr",
            resp_band=REST_RESPIRATION_BAND, heart_band=REST_HEARTBEAT_BAND,
            workers: int = 1) -> list[RateTrack]:
    """Continuous monitoring of every support entry; one RateTrack per subject.

    The beamformer acts frame by frame, so each subject's complex track is
    formed once for the whole stream and then windowed.
    """
    if cube.n_frames < schedule.window_frames(cube.config.frame_rate):
        raise MonitorError(
            f"stream of {cube.duration:.2f} s is shorter than T_win={schedule.t_win} s")
    if support.count == 0:
        log.warning("empty support: nothing to monitor")
        return []

    def run(item):
        z, entry = item
        track = beamform_support(cube, entry, A, B)
        rt = estimate_windows(track, cube.config.frame_rate, schedule, refinement, method,
                              resp_band, heart_band, subject=z)
        rt.position = (entry.distance, entry.angle)
        return rt

    items = list(enumerate(support.entries))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(run, items))
    return [run(item) for item in items]


# -- exports -----------------------------------------------------------------

RATE_COLUMNS = ("time_s", "subject_id", "rr_bpm", "hr_bpm", "rr_raw_bpm", "hr_raw_bpm",
                "rr_band_lo", "rr_band_hi", "hr_band_lo", "hr_band_hi")


def write_rate_track(track: RateTrack, path) -> None:
    lines = [",".join(RATE_COLUMNS)]
    for i in range(len(track)):
        lines.append(
            f"{track.times[i]:.2f},{track.subject},{track.f_r[i]:.4f},{track.f_h[i]:.4f},"
            f"{track.raw_f_r[i]:.4f},{track.raw_f_h[i]:.4f},"
            f"{track.resp_bands[i, 0]:.4f},{track.resp_bands[i, 1]:.4f},"
            f"{track.heart_bands[i, 0]:.4f},{track.heart_bands[i, 1]:.4f}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_rate_track(path) -> RateTrack:
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if arr.shape[1] != len(RATE_COLUMNS):
        raise MonitorError(f"{path}: expected {len(RATE_COLUMNS)} columns")
    subjects = np.unique(arr[:, 1])
    if subjects.size > 1:
        raise MonitorError(f"{path}: more than one subject in a rate track")
    return RateTrack(int(subjects[0]) if subjects.size else 0, arr[:, 0], arr[:, 2], arr[:, 3],
                     arr[:, 4], arr[:, 5], arr[:, 6:8], arr[:, 8:10])


def write_vibration(phase: np.ndarray, frame_rate: float, path, start_time: float = 0.0) -> None:
    t = start_time + np.arange(phase.size) / frame_rate
    lines = ["time_s,phase_rad"] + [f"{a:.2f},{b:.6f}" for a, b in zip(t, phase)]
    atomic_write_text(path, "\n".join(lines) + "\n")
