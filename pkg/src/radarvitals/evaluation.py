"""Reference rates and accuracy metrics (AeCDF, success rates, RMSE)."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._io import atomic_write_text
from .dictionaries import BPM_PER_HZ

AECDF_THRESHOLDS = np.arange(0.0, 10.0 + 1e-9, 0.25)
ASR_THRESHOLDS = (2.0, 3.0, 4.0)


class MetricError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ReferenceTrack:
    times: np.ndarray  # s, end of each window
    rates: np.ndarray  # bpm
    kind: str = "respiration"


def reference_rates(waveform, sample_rate: float, band, t_win: float, t_int: float,
                    kind: str = "respiration") -> ReferenceTrack:
    """Sliding-window DFT rate of a contact-style waveform.

    Each ``t_win`` window is mean-removed, zero-padded to 60 s (1 bpm bins) and
    the in-band (Hz) spectral peak is taken. Windows advance by ``t_int``.
    """
    x = np.asarray(waveform, dtype=float)
    win = int(round(t_win * sample_rate))
    hop = int(round(t_int * sample_rate))
    if hop < 1 or abs(hop - t_int * sample_rate) > 1e-6:
        raise MetricError(f"T_int={t_int} s is not a whole number of samples")
    if x.size < win or win < 2:
        raise MetricError(f"waveform of {x.size / sample_rate:.2f} s is shorter than T_win={t_win} s")
    pad = int(round(BPM_PER_HZ * sample_rate))
    nfft = pad * int(np.ceil(win / pad))
    freqs = np.fft.rfftfreq(nfft, 1.0 / sample_rate)
    sel = np.flatnonzero((freqs >= band[0] - 1e-9) & (freqs <= band[1] + 1e-9))
    if sel.size == 0:
        raise MetricError(f"band {band} Hz has no spectral bin")
    n = (x.size - win) // hop + 1
    idx = np.arange(win)[None, :] + hop * np.arange(n)[:, None]
    frames = x[idx]
    frames = frames - frames.mean(axis=1, keepdims=True)
    spec = np.abs(np.fft.rfft(frames, nfft, axis=1))[:, sel]
    rates = freqs[sel][np.argmax(spec, axis=1)] * BPM_PER_HZ
    times = (win + hop * np.arange(n)) / sample_rate
    return ReferenceTrack(times, rates, kind)


def _check_aligned(estimates, references):
    if len(estimates) != len(references):
        raise MetricError(f"{len(estimates)} estimate tracks vs {len(references)} references")
    if not estimates:
        raise MetricError("no tracks to evaluate")
    pairs = []
    for est, ref in zip(estimates, references):
        t_e, v_e = est
        t_r, v_r = ref
        t_e, t_r = np.asarray(t_e, float), np.asarray(t_r, float)
        if t_e.shape != t_r.shape or not np.allclose(t_e, t_r, atol=1e-6, rtol=0):
            raise MetricError("estimate and reference timestamps are misaligned")
        if t_e.size == 0:
            raise MetricError("empty overlap between estimate and reference")
        pairs.append(np.abs(np.asarray(v_e, float) - np.asarray(v_r, float)))
    return pairs


def aecdf(estimates, references, thresholds=AECDF_THRESHOLDS) -> np.ndarray:
    """Mean over subjects of the percentage of instants with |error| <= threshold.

    ``estimates`` and ``references`` are sequences of ``(times, rates)`` pairs.
    """
    errors = _check_aligned(estimates, references)
    thresholds = np.asarray(thresholds, dtype=float)
    per_subject = [np.mean(e[None, :] <= thresholds[:, None] + 1e-12, axis=1) for e in errors]
    return 100.0 * np.mean(per_subject, axis=0)


@dataclass(frozen=True, eq=False)
class MetricReport:
    thresholds: np.ndarray
    aecdf: np.ndarray  # %
    asr: dict  # threshold -> %
    rmse: np.ndarray  # per subject
    mae: np.ndarray

    @property
    def armse(self) -> float:
        return float(np.mean(self.rmse))

    @property
    def median_rmse(self) -> float:
        return float(np.median(self.rmse))


def rmse_report(estimates, references, thresholds=AECDF_THRESHOLDS) -> MetricReport:
    errors = _check_aligned(estimates, references)
    thresholds = np.asarray(thresholds, dtype=float)
    for tau in ASR_THRESHOLDS:
        if not np.any(np.isclose(thresholds, tau)):
            thresholds = np.sort(np.append(thresholds, tau))
    curve = aecdf(estimates, references, thresholds)
    asr = {tau: float(curve[np.argmin(np.abs(thresholds - tau))]) for tau in ASR_THRESHOLDS}
    rmse = np.array([np.sqrt(np.mean(e ** 2)) for e in errors])
    mae = np.array([np.mean(e) for e in errors])
    return MetricReport(thresholds, curve, asr, rmse, mae)


def write_reports(hr: MetricReport, rr: MetricReport, out_dir, subject_ids=None) -> list[Path]:
    out = Path(out_dir)
    if not np.array_equal(hr.thresholds, rr.thresholds):
        raise MetricError("HR and RR reports use different threshold grids")
    lines = ["threshold,aecdf_hr,aecdf_rr"]
    lines += [f"{t:.2f},{a:.4f},{b:.4f}" for t, a, b in zip(hr.thresholds, hr.aecdf, rr.aecdf)]
    atomic_write_text(out / "aecdf.csv", "\n".join(lines) + "\n")
    ids = subject_ids if subject_ids is not None else range(len(hr.rmse))
    lines = ["subject,rmse_hr,rmse_rr"]
    lines += [f"{s},{a:.4f},{b:.4f}" for s, a, b in zip(ids, hr.rmse, rr.rmse)]
    atomic_write_text(out / "rmse.csv", "\n".join(lines) + "\n")
    summary = []
    for name, rep in (("HR", hr), ("RR", rr)):
        asr = " ".join(f"ASR{int(t)}={v:.2f}%" for t, v in rep.asr.items())
        summary.append(f"{name}: {asr} ARMSE={rep.armse:.4f} median_RMSE={rep.median_rmse:.4f}")
    atomic_write_text(out / "summary.txt", "\n".join(summary) + "\n")
    return [out / "aecdf.csv", out / "rmse.csv", out / "summary.txt"]
