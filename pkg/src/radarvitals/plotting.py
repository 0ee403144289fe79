"""Report figures written straight to files through the Agg canvas."""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from ._io import atomic_write_bytes
from .evaluation import MetricReport
from .localization import DetectionSettings, RangeAngleMap, Support, normalized_roi_map


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    FigureCanvasAgg(fig)
    buf = io.BytesIO()
    fig.savefig(buf, format=path.suffix.lstrip(".") or "png", dpi=110,
                metadata={"Software": None})
    return atomic_write_bytes(path, buf.getvalue())


def plot_range_angle_map(ramap: RangeAngleMap, path, support: Support | None = None,
                         truth=None, detection: DetectionSettings = DetectionSettings(),
                         title: str = "Range-angle map") -> Path:
    """ROI-normalized map with detections (red x) and planted positions (cyan o).

    ``truth`` is an iterable of ``(distance_m, angle_deg)`` pairs.
    """
    values = normalized_roi_map(ramap, detection)
    fig = Figure(figsize=(6.0, 4.5))
    ax = fig.add_subplot()
    extent = (ramap.angles[0], ramap.angles[-1], ramap.distances[0], ramap.distances[-1])
    im = ax.imshow(values, origin="lower", aspect="auto", extent=extent, cmap="viridis",
                   vmin=0.0, vmax=1.0, interpolation="nearest")
    fig.colorbar(im, ax=ax, label="normalized power")
    if truth is not None:
        for d, a in truth:
            ax.plot(a, d, "o", mfc="none", mec="cyan", ms=10, mew=1.5)
    if support is not None:
        for e in support.entries:
            ax.plot(e.angle, e.distance, "x", color="red", ms=9, mew=2)
    ax.set_xlim(*detection.roi_angle)
    ax.set_ylim(*detection.roi_distance)
    ax.set_xlabel("angle [deg]")
    ax.set_ylabel("distance [m]")
    ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def plot_rate_tracks(tracks, path, references=None) -> Path:
    """One row per subject with RR and HR panels.

    ``references`` maps subject id to ``(rr_track, hr_track)`` pairs of
    ``(times, rates)``; missing subjects are drawn without a reference.
    """
    tracks = list(tracks)
    references = references or {}
    rows = max(len(tracks), 1)
    fig = Figure(figsize=(10.0, 2.6 * rows))
    axes = fig.subplots(rows, 2, squeeze=False)
    for row, track in zip(axes, tracks):
        ref = references.get(track.subject)
        for ax, name, est, raw, k in ((row[0], "RR", track.f_r, track.raw_f_r, 0),
                                      (row[1], "HR", track.f_h, track.raw_f_h, 1)):
            ax.plot(track.times, raw, color="0.7", lw=0.8, label="raw")
            ax.plot(track.times, est, color="C0", lw=1.4, label="refined")
            if ref is not None:
                ax.plot(ref[k][0], ref[k][1], color="C3", lw=1.2, ls="--", label="reference")
            ax.set_ylabel(f"{name} [bpm]")
            ax.set_title(f"subject {track.subject} {name}", fontsize=9)
            ax.grid(alpha=0.3)
        row[0].legend(fontsize=7, loc="upper right")
    for ax in axes[-1]:
        ax.set_xlabel("time [s]")
    fig.tight_layout()
    return _save(fig, path)


def plot_aecdf(hr: MetricReport, rr: MetricReport, path) -> Path:
    fig = Figure(figsize=(5.5, 4.0))
    ax = fig.add_subplot()
    ax.step(hr.thresholds, hr.aecdf, where="post", label=f"HR (ARMSE {hr.armse:.2f})")
    ax.step(rr.thresholds, rr.aecdf, where="post", label=f"RR (ARMSE {rr.armse:.2f})")
    for tau in hr.asr:
        ax.axvline(tau, color="0.8", lw=0.8, zorder=0)
    ax.set_xlim(hr.thresholds[0], hr.thresholds[-1])
    ax.set_ylim(0, 101)
    ax.set_xlabel("absolute error threshold [bpm]")
    ax.set_ylabel("AeCDF [%]")
    ax.grid(alpha=0.3)
    ax.legend(loc="lower right")
    fig.tight_layout()
    return _save(fig, path)


def plot_rmse(hr: MetricReport, rr: MetricReport, path, subject_ids=None) -> Path:
    ids = list(subject_ids) if subject_ids is not None else list(range(len(hr.rmse)))
    x = np.arange(len(ids))
    fig = Figure(figsize=(5.5, 3.5))
    ax = fig.add_subplot()
    ax.bar(x - 0.2, hr.rmse, 0.4, label="HR")
    ax.bar(x + 0.2, rr.rmse, 0.4, label="RR")
    ax.set_xticks(x, [str(i) for i in ids])
    ax.set_xlabel("subject")
    ax.set_ylabel("RMSE [bpm]")
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)
