"""Software phantom: scenes of vibrating reflectors rendered into frame cubes.

Noise streams are split per (frame, receiver): the noise of frame ``l`` at
receiver ``k`` is drawn from ``numpy.random.default_rng(SeedSequence(seed,
spawn_key=(l, k)))``, so a cube is reproducible from its seed regardless of how
frames are distributed over workers.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ._io import atomic_write_bytes, atomic_write_text
from .config import RadarConfig, deg2rad

log = logging.getLogger(__name__)

HUMAN = "human"
STATIC_CLUTTER = "static-clutter"
OSCILLATING_CLUTTER = "oscillating-clutter"
KINDS = (HUMAN, STATIC_CLUTTER, OSCILLATING_CLUTTER)

# Default thoracic displacement amplitudes [m].
RESPIRATION_AMPLITUDE = 2e-3
HEARTBEAT_AMPLITUDE = 0.2e-3


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class VibrationComponent:
    """Tone ``amplitude * cos(2 pi int f(t) dt + phase)`` with an optionally drifting rate.

    The instantaneous frequency is ``frequency + drift_bpm / 60 * sin(2 pi t /
    drift_period + drift_phase)``; ``drift_bpm = 0`` gives a fixed tone.
    """

    amplitude: float  # m
    frequency: float  # Hz, centre
    label: str | None = None  # "respiration", "heartbeat", "harmonic", ...
    phase: float = 0.0  # rad
    drift_bpm: float = 0.0
    drift_period: float = 120.0  # s
    drift_phase: float = 0.0  # rad

    @property
    def max_frequency(self) -> float:
        return self.frequency + abs(self.drift_bpm) / 60.0

    def instantaneous_frequency(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.drift_bpm == 0:
            return np.full(t.shape, self.frequency)
        w = 2 * np.pi / self.drift_period
        return self.frequency + self.drift_bpm / 60.0 * np.sin(w * t + self.drift_phase)

    def waveform(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        phi = 2 * np.pi * self.frequency * t + self.phase
        if self.drift_bpm != 0:
            # closed-form integral of the sinusoidal rate deviation
            w = 2 * np.pi / self.drift_period
            dev = self.drift_bpm / 60.0
            phi = phi - 2 * np.pi * dev / w * (np.cos(w * t + self.drift_phase)
                                                - np.cos(self.drift_phase))
        return self.amplitude * np.cos(phi)


@dataclass(frozen=True, eq=False)
class VibrationSpec:
    """Tonal displacement components, or a sampled trace that overrides them."""

    components: tuple[VibrationComponent, ...] = ()
    trace: np.ndarray | None = None  # m
    trace_rate: float | None = None  # Hz

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        for c in self.components:
            if not (math.isfinite(c.amplitude) and math.isfinite(c.frequency)):
                raise SceneError("vibration components must be finite")
            if c.frequency < 0 or c.frequency - abs(c.drift_bpm) / 60.0 < 0:
                raise SceneError(f"negative vibration frequency {c.frequency}")
            if c.drift_bpm != 0 and not c.drift_period > 0:
                raise SceneError("drift period must be positive")
        if self.trace is not None:
            trace = np.asarray(self.trace, dtype=float)
            if trace.ndim != 1 or trace.size == 0:
                raise SceneError("vibration trace must be a non-empty 1-D array")
            if not np.all(np.isfinite(trace)):
                raise SceneError("vibration trace contains non-finite values")
            if not (self.trace_rate and self.trace_rate > 0):
                raise SceneError("vibration trace needs a positive sample rate")
            object.__setattr__(self, "trace", trace)

    @property
    def is_static(self) -> bool:
        if self.trace is not None:
            return not np.any(self.trace - self.trace.mean())
        return all(c.amplitude == 0 for c in self.components)

    def labelled(self, label: str) -> "VibrationSpec":
        return VibrationSpec(tuple(c for c in self.components if c.label == label))

    def validate(self, frame_rate: float) -> None:
        for c in self.components:
            if c.max_frequency >= frame_rate / 2:
                raise SceneError(
                    f"vibration frequency {c.max_frequency} Hz is not below f_s/2 = {frame_rate / 2}")


def human_vibration(rr_bpm: float, hr_bpm: float,
                    respiration_amplitude: float = RESPIRATION_AMPLITUDE,
                    heartbeat_amplitude: float = HEARTBEAT_AMPLITUDE,
                    harmonics: dict[int, float] | None = None) -> VibrationSpec:
    """Respiration + heartbeat tones; ``harmonics`` maps order -> amplitude [m]."""
    comps = [VibrationComponent(respiration_amplitude, rr_bpm / 60.0, "respiration"),
             VibrationComponent(heartbeat_amplitude, hr_bpm / 60.0, "heartbeat")]
    for order, amp in sorted((harmonics or {}).items()):
        comps.append(VibrationComponent(amp, order * rr_bpm / 60.0, "harmonic"))
    return VibrationSpec(tuple(comps))


def drifting_human(rr_bpm: float, hr_bpm: float, rr_drift: float, hr_drift: float,
                   rr_period: float = 120.0, hr_period: float = 90.0,
                   phases=(0.0, 0.0, 0.0, 0.0),
                   respiration_amplitude: float = RESPIRATION_AMPLITUDE,
                   heartbeat_amplitude: float = HEARTBEAT_AMPLITUDE) -> VibrationSpec:
    """Respiration and heartbeat whose rates swing sinusoidally around a centre.

    ``phases`` holds the respiration tone, heartbeat tone, respiration drift and
    heartbeat drift phases [rad].
    """
    p_r, p_h, d_r, d_h = (float(v) for v in phases)
    return VibrationSpec((
        VibrationComponent(respiration_amplitude, rr_bpm / 60.0, "respiration", p_r,
                           rr_drift, rr_period, d_r),
        VibrationComponent(heartbeat_amplitude, hr_bpm / 60.0, "heartbeat", p_h,
                           hr_drift, hr_period, d_h),
    ))


@dataclass(frozen=True)
class TargetSpec:
    distance: float  # m
    angle: float  # deg
    amplitude: complex = 1.0
    vibration: VibrationSpec = field(default_factory=VibrationSpec)
    kind: str = HUMAN

    def validate(self, config: RadarConfig) -> None:
        if self.kind not in KINDS:
            raise SceneError(f"unknown target kind {self.kind!r}")
        if not all(math.isfinite(v) for v in (self.distance, self.angle,
                                                abs(complex(self.amplitude)))):
            raise SceneError("target parameters must be finite")
        if not 0 <= self.distance <= config.d_max:
            raise SceneError(f"distance {self.distance} m outside [0, {config.d_max:.3f}] m")
        if not -90 <= self.angle < 90:
            raise SceneError(f"angle {self.angle} deg outside [-90, 90)")
        if self.kind == STATIC_CLUTTER and not self.vibration.is_static:
            raise SceneError("static clutter cannot vibrate")
        self.vibration.validate(config.frame_rate)


@dataclass(frozen=True)
class Scene:
    targets: tuple[TargetSpec, ...]
    noise_sigma: float = 0.0
    duration: float = 10.0  # s
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))

    @property
    def humans(self) -> list[TargetSpec]:
        return [t for t in self.targets if t.kind == HUMAN]

    def n_frames(self, config: RadarConfig) -> int:
        return int(round(self.duration * config.frame_rate))

    def validate(self, config: RadarConfig) -> None:
        if not self.targets:
            raise SceneError("scene has no targets")
        if not (math.isfinite(self.noise_sigma) and self.noise_sigma >= 0):
            raise SceneError(f"noise sigma must be >= 0, got {self.noise_sigma}")
        if not (math.isfinite(self.duration) and self.duration > 0):
            raise SceneError(f"duration must be positive, got {self.duration}")
        if self.n_frames(config) < 1:
            raise SceneError("duration shorter than one frame")
        seen = set()
        for t in self.targets:
            t.validate(config)
            if t.kind == HUMAN:
                key = (round(t.distance, 9), round(t.angle, 9))
                if key in seen:
                    raise SceneError(f"two humans share position {key}")
                seen.add(key)


@dataclass(frozen=True, eq=False)
class FrameCube:
    samples: np.ndarray  # N_bar x K x L
    config: RadarConfig
    real_only: bool = False
    seed: int | None = None

    def __post_init__(self):
        s = self.samples
        if s.ndim != 3 or s.shape[:2] != (self.config.fast_time_samples, self.config.receivers):
            raise SceneError(
                f"cube shape {s.shape} inconsistent with N_bar={self.config.fast_time_samples},"
                f" K={self.config.receivers}")
        if not np.all(np.isfinite(s)):
            raise SceneError("cube contains non-finite samples")

    @property
    def n_frames(self) -> int:
        return self.samples.shape[2]

    @property
    def duration(self) -> float:
        return self.n_frames * self.config.frame_period

    def frames(self, start: int, stop: int) -> "FrameCube":
        if not 0 <= start < stop <= self.n_frames:
            raise SceneError(f"frame range [{start}, {stop}) outside cube of {self.n_frames}")
        return replace(self, samples=self.samples[:, :, start:stop])


# -- vibrations --------------------------------------------------------------

def resample_trace(trace, rate: float, frame_period: float, length: int | None = None) -> np.ndarray:
    """Linear interpolation of a sampled trace onto ``l * frame_period``."""
    trace = np.asarray(trace, dtype=float)
    available = (trace.size - 1) / rate
    if length is None:
        length = int(math.floor(available / frame_period + 1e-9)) + 1
    needed = (length - 1) * frame_period
    if needed > available + 1e-9:
        raise SceneError(
            f"trace covers {available:.3f} s but {needed:.3f} s are required")
    t_src = np.arange(trace.size) / rate
    return np.interp(np.arange(length) * frame_period, t_src, trace)


def synthesize_vibration(spec: VibrationSpec, length: int, frame_period: float) -> np.ndarray:
    """Displacement series v[l] [m] for l = 0..length-1."""
    if spec.trace is not None:
        return resample_trace(spec.trace, spec.trace_rate, frame_period, length)
    t = np.arange(length) * frame_period
    v = np.zeros(length)
    for c in spec.components:
        v += c.waveform(t)
    return v


def reference_waveforms(target: TargetSpec, rate: float, duration: float) -> dict:
    """Per-label displacement waveforms of a tonal target sampled at ``rate``.

    These play the part of contact references (belt, ECG) in evaluation.
    """
    if target.vibration.trace is not None:
        raise SceneError("trace-backed targets have no per-label components")
    t = np.arange(int(round(duration * rate))) / rate
    out = {}
    for c in target.vibration.components:
        key = c.label or "unlabelled"
        out[key] = out.get(key, 0.0) + c.waveform(t)
    return out


# -- rendering ---------------------------------------------------------------

def _target_response(target: TargetSpec, config: RadarConfig, n_frames: int):
    n = np.arange(config.fast_time_samples)
    k = np.arange(config.receivers)
    beat = config.distance_to_beat(target.distance)
    fast = np.exp(2j * np.pi * beat * n / config.adc_rate)
    spatial = np.exp(1j * np.pi * k * np.sin(deg2rad(target.angle)))
    v = synthesize_vibration(target.vibration, n_frames, config.frame_period)
    psi = 4 * np.pi / config.lambda_max * (target.distance + v)
    slow = complex(target.amplitude) * np.exp(1j * psi)
    return fast, spatial, slow


def frame_noise(seed: int, frame: int, receiver: int, n: int, sigma: float,
                chirps: int = 1, materialize: bool = False) -> np.ndarray:
    """Complex Gaussian noise for one (frame, receiver) after averaging ``chirps`` chirps."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(frame, receiver)))
    if materialize:
        draws = rng.standard_normal((chirps, 2, n)) * (sigma / math.sqrt(2))
        w = draws.mean(axis=0)
    else:
        w = rng.standard_normal((2, n)) * (sigma / math.sqrt(2 * chirps))
    return w[0] + 1j * w[1]


def render_cube(scene: Scene, config: RadarConfig, *, materialize_chirps: bool = False,
                workers: int = 1) -> FrameCube:
    """Beat-signal frame cube of a scene, with chirp-averaged complex noise."""
    scene.validate(config)
    n_frames = scene.n_frames(config)
    shape = (config.fast_time_samples, config.receivers, n_frames)
    cube = np.zeros(shape, dtype=complex)
    for target in scene.targets:
        fast, spatial, slow = _target_response(target, config, n_frames)
        cube += fast[:, None, None] * spatial[None, :, None] * slow[None, None, :]

    if scene.noise_sigma > 0:
        n, K = config.fast_time_samples, config.receivers

        def fill(frame):
            for k in range(K):
                cube[:, k, frame] += frame_noise(scene.seed, frame, k, n, scene.noise_sigma,
                                                 config.chirps_per_frame, materialize_chirps)

        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                list(pool.map(fill, range(n_frames)))
        else:
            for frame in range(n_frames):
                fill(frame)
    if not np.all(np.isfinite(cube)):
        raise SceneError("rendered cube contains non-finite samples")
    return FrameCube(cube, config, real_only=False, seed=scene.seed)


def take_inphase(cube: FrameCube) -> FrameCube:
    """Keep only the in-phase (real) channel."""
    return replace(cube, samples=cube.samples.real.astype(complex), real_only=True)


# -- files -------------------------------------------------------------------

def _parse_header(path: Path) -> dict:
    header = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        header[key.strip()] = value.strip()
    return header


def save_cube(cube: FrameCube, path) -> tuple[Path, Path]:
    """Write ``<path>.hdr`` and ``<path>.bin``; payload is (l, k, n) with n fastest."""
    base = Path(path).with_suffix("")
    hdr, payload = base.with_suffix(".hdr"), base.with_suffix(".bin")
    n_bar, K, L = cube.samples.shape
    lines = [f"N_bar={n_bar}", f"K={K}", f"L={L}", "dtype=complex64-le-interleaved",
             f"real_only={int(cube.real_only)}", f"f_s={cube.config.frame_rate!r}",
             f"seed={'' if cube.seed is None else cube.seed}"]
    data = np.transpose(cube.samples, (2, 1, 0)).astype("<c8")
    atomic_write_bytes(payload, data.tobytes())
    atomic_write_bytes(hdr, ("\n".join(lines) + "\n").encode())
    return hdr, payload


def load_cube(path, config: RadarConfig) -> FrameCube:
    base = Path(path).with_suffix("")
    hdr_path = base.with_suffix(".hdr")
    if not hdr_path.exists():
        raise FileNotFoundError(f"cube header {hdr_path} not found")
    header = _parse_header(hdr_path)
    try:
        n_bar, K, L = int(header["N_bar"]), int(header["K"]), int(header["L"])
        f_s = float(header["f_s"])
    except (KeyError, ValueError) as exc:
        raise SceneError(f"{hdr_path}: malformed header ({exc})") from exc
    if (n_bar, K) != (config.fast_time_samples, config.receivers) or \
            abs(f_s - config.frame_rate) > 1e-9 * config.frame_rate:
        raise SceneError(
            f"cube (N_bar={n_bar}, K={K}, f_s={f_s}) does not match the radar config")
    raw = np.fromfile(base.with_suffix(".bin"), dtype="<c8")
    if raw.size != n_bar * K * L:
        raise SceneError(f"cube payload has {raw.size} samples, expected {n_bar * K * L}")
    samples = np.transpose(raw.reshape(L, K, n_bar), (2, 1, 0)).astype(complex)
    seed = header.get("seed") or None
    return FrameCube(samples, config, real_only=header.get("real_only") == "1",
                     seed=None if seed is None else int(seed))


def load_vibration_trace(path, peak_displacement: float | None = None) -> VibrationSpec:
    """Read a displacement trace; mean-removed and optionally rescaled to a peak [m].

    Accepts two columns ``time_s, displacement_m`` or a single column preceded
    by a ``sample_rate=<Hz>`` header line (``#`` prefixes are allowed).
    """
    path = Path(path)
    rate = None
    rows = []
    for line in path.read_text().splitlines():
        text = line.strip().lstrip("#").strip()
        if not text:
            continue
        if "=" in text:
            key, _, value = text.partition("=")
            if key.strip() == "sample_rate":
                rate = float(value)
            continue
        fields = [f for f in text.replace(",", " ").split() if f]
        try:
            rows.append([float(f) for f in fields])
        except ValueError:
            continue  # column titles
    if not rows:
        raise SceneError(f"{path}: empty trace")
    width = {len(r) for r in rows}
    if width == {2}:
        arr = np.asarray(rows)
        dt = np.diff(arr[:, 0])
        if arr.shape[0] < 2 or np.any(dt <= 0):
            raise SceneError(f"{path}: time column must be strictly increasing")
        rate = 1.0 / float(np.mean(dt))
        values = arr[:, 1]
    elif width == {1}:
        if rate is None:
            raise SceneError(f"{path}: single-column trace needs a sample_rate header")
        values = np.asarray(rows)[:, 0]
    else:
        raise SceneError(f"{path}: expected one or two columns")
    values = values - values.mean()
    if peak_displacement is not None:
        peak = np.max(np.abs(values))
        if peak > 0:
            values = values * (peak_displacement / peak)
    return VibrationSpec(trace=values, trace_rate=rate)


def save_vibration_trace(path, values, rate: float) -> None:
    values = np.asarray(values, dtype=float)
    t = np.arange(values.size) / rate
    lines = ["time_s,displacement_m"] + [f"{a:.6f},{b:.9e}" for a, b in zip(t, values)]
    atomic_write_text(path, "\n".join(lines) + "\n")


def _complex_from_json(value) -> complex:
    if isinstance(value, (list, tuple)):
        return complex(float(value[0]), float(value[1]))
    return complex(value)


def scene_from_dict(data: dict, base_dir: Path | None = None) -> Scene:
    targets = []
    for i, t in enumerate(data.get("targets", [])):
        try:
            vib = t.get("vibration", {}) or {}
            if "trace" in vib:
                trace_path = Path(vib["trace"])
                if base_dir is not None and not trace_path.is_absolute():
                    trace_path = base_dir / trace_path
                spec = load_vibration_trace(trace_path, vib.get("peak_m"))
            else:
                spec = VibrationSpec(tuple(
                    VibrationComponent(float(c["amplitude_m"]), float(c["frequency_hz"]),
                                       c.get("label"), float(c.get("phase_rad", 0.0)),
                                       float(c.get("drift_bpm", 0.0)),
                                       float(c.get("drift_period_s", 120.0)),
                                       float(c.get("drift_phase_rad", 0.0)))
                    for c in vib.get("components", [])))
            targets.append(TargetSpec(distance=float(t["distance_m"]),
                                      angle=float(t["angle_deg"]),
                                      amplitude=_complex_from_json(t.get("amplitude", 1.0)),
                                      vibration=spec,
                                      kind=t.get("kind", HUMAN)))
        except (KeyError, TypeError, ValueError) as exc:
            raise SceneError(f"target {i}: {exc}") from exc
    return Scene(tuple(targets), noise_sigma=float(data.get("noise_sigma", 0.0)),
                 duration=float(data.get("duration", 0.0)), seed=int(data.get("seed", 0)))


def load_scene(path) -> Scene:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SceneError(f"{path}: {exc}") from exc
    return scene_from_dict(data, path.parent)


def scene_to_dict(scene: Scene) -> dict:
    targets = []
    for t in scene.targets:
        if t.vibration.trace is not None:
            raise SceneError("trace-backed targets cannot be serialized inline")
        amp = complex(t.amplitude)
        targets.append({
            "kind": t.kind, "distance_m": t.distance, "angle_deg": t.angle,
            "amplitude": [amp.real, amp.imag],
            "vibration": {"components": [
                {"amplitude_m": c.amplitude, "frequency_hz": c.frequency, "label": c.label,
                 "phase_rad": c.phase, "drift_bpm": c.drift_bpm,
                 "drift_period_s": c.drift_period, "drift_phase_rad": c.drift_phase}
                for c in t.vibration.components]},
        })
    return {"duration": scene.duration, "noise_sigma": scene.noise_sigma,
            "seed": scene.seed, "targets": targets}
