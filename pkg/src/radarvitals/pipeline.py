"""Run configuration and the file-level stages behind the command line.

Every stage reads its inputs from files, writes its artifacts atomically into
one directory and returns the paths it wrote. The effective configuration is
echoed next to the artifacts as ``config.json``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from ._io import atomic_write_text
from .config import ConfigError, RadarConfig
from .dictionaries import build_angle_dictionary, build_range_dictionary
from .evaluation import MetricError, reference_rates, rmse_report, write_reports
from .localization import (REST_HEARTBEAT_BAND, REST_RESPIRATION_BAND, DetectionSettings,
                           SolverSettings, angle_fft_map, detect_support, localize,
                           read_support, write_map_csv, write_map_pgm, write_support,
                           normalized_roi_map)
from .plotting import plot_aecdf, plot_range_angle_map, plot_rate_tracks, plot_rmse
from .scenarios import c3_scene, c4_scene
from .simulator import (HUMAN, Scene, SceneError, load_cube, load_scene, reference_waveforms,
                        render_cube, save_cube, save_vibration_trace, scene_to_dict,
                        take_inphase)
from .vitals import (RefinementParams, Schedule, beamform_support, demodulate, monitor,
                     read_rate_track, write_rate_track, write_vibration)

log = logging.getLogger(__name__)

PRESETS = {"c3": c3_scene, "c4": c4_scene}


class DataError(ValueError):
    """Input artifacts are missing, malformed or mutually inconsistent."""


@dataclass(frozen=True)
class PipelineConfig:
    radar: RadarConfig = field(default_factory=RadarConfig)
    scene: str | None = None  # scene file; relative paths resolve against the config file
    preset: str | None = "c4"  # used when no scene file is given
    duration: float | None = None  # preset duration override [s]
    solver: SolverSettings = field(default_factory=SolverSettings)
    respiration_band: tuple[float, float] = REST_RESPIRATION_BAND  # Hz
    heartbeat_band: tuple[float, float] = REST_HEARTBEAT_BAND  # Hz
    schedule: Schedule = field(default_factory=Schedule)
    detection: DetectionSettings = field(default_factory=DetectionSettings)
    refinement: RefinementParams = field(default_factory=RefinementParams)
    output_dir: str = "out"
    seed: int = 0
    threads: int = 1
    in_phase: bool = True
    reference_rate: float = 100.0  # Hz, sample rate of exported reference waveforms

    def __post_init__(self):
        s = self.schedule
        if not 0 < s.t_loc <= s.t_win:
            raise ConfigError(f"need 0 < T_loc <= T_win, got {s.t_loc} and {s.t_win}")
        if s.t_int <= 0:
            raise ConfigError("T_int must be positive")
        for name in ("respiration_band", "heartbeat_band"):
            lo, hi = getattr(self, name)
            if not 0 <= lo < hi:
                raise ConfigError(f"{name} must satisfy 0 <= lo < hi, got {(lo, hi)}")
        r, h = self.respiration_band, self.heartbeat_band
        if r[1] >= h[0] and h[1] >= r[0]:
            raise ConfigError(f"bands overlap: {r} Hz and {h} Hz")
        if self.preset is not None and self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if self.scene is None and self.preset is None:
            raise ConfigError("either a scene file or a preset is required")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.reference_rate <= 0:
            raise ConfigError("reference_rate must be positive")

    @property
    def bands(self):
        return (self.respiration_band, self.heartbeat_band)

    def check_duration(self, duration: float) -> None:
        if duration + 1e-9 < self.schedule.t_win:
            raise ConfigError(
                f"scene of {duration} s is shorter than T_win={self.schedule.t_win} s")

    # -- (de)serialization --------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "radar": self.radar.to_dict(),
            "scene": self.scene,
            "preset": self.preset,
            "duration": self.duration,
            "solver": asdict(self.solver),
            "bands": {"respiration_hz": list(self.respiration_band),
                      "heartbeat_hz": list(self.heartbeat_band)},
            "schedule": asdict(self.schedule),
            "detection": {k: list(v) if isinstance(v, tuple) else v
                          for k, v in asdict(self.detection).items()},
            "refinement": {k: list(v) if isinstance(v, tuple) else v
                           for k, v in asdict(self.refinement).items()},
            "output_dir": self.output_dir,
            "seed": self.seed,
            "threads": self.threads,
            "in_phase": self.in_phase,
            "reference_rate": self.reference_rate,
        }

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path | None = None) -> "PipelineConfig":
        known = {f.name for f in fields(cls)} - {"respiration_band", "heartbeat_band"}
        known |= {"bands"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            kwargs = {}
            if "radar" in data:
                kwargs["radar"] = RadarConfig.from_dict(data["radar"])
            if data.get("scene") is not None:
                scene = Path(data["scene"])
                if base_dir is not None and not scene.is_absolute():
                    scene = base_dir / scene
                kwargs["scene"] = str(scene)
            if "preset" in data:
                kwargs["preset"] = data["preset"]
            if data.get("duration") is not None:
                kwargs["duration"] = float(data["duration"])
            for key, typ in (("solver", SolverSettings), ("schedule", Schedule),
                             ("detection", DetectionSettings),
                             ("refinement", RefinementParams)):
                if key in data:
                    kwargs[key] = _settings(typ, data[key], key)
            bands = data.get("bands", {})
            unknown = set(bands) - {"respiration_hz", "heartbeat_hz"}
            if unknown:
                raise ConfigError(f"unknown band keys: {sorted(unknown)}")
            if "respiration_hz" in bands:
                kwargs["respiration_band"] = _pair(bands["respiration_hz"])
            if "heartbeat_hz" in bands:
                kwargs["heartbeat_band"] = _pair(bands["heartbeat_hz"])
            for key, conv in (("output_dir", str), ("seed", int), ("threads", int),
                              ("in_phase", bool), ("reference_rate", float)):
                if key in data:
                    kwargs[key] = conv(data[key])
            return cls(**kwargs)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file {path} not found") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(data, path.parent)

    def save(self, path) -> Path:
        return atomic_write_text(path, json.dumps(self.to_dict(), indent=2) + "\n")

    def with_overrides(self, **overrides) -> "PipelineConfig":
        """Copy with non-None overrides applied (command-line flags win over the file)."""
        values = {k: v for k, v in overrides.items() if v is not None}
        if not values:
            return self
        try:
            return replace(self, **values)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def _pair(value) -> tuple[float, float]:
    lo, hi = value
    return (float(lo), float(hi))


def _settings(typ, raw: dict, name: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{name} must be an object")
    names = {f.name for f in fields(typ)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"unknown {name} keys: {sorted(unknown)}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
    return typ(**kwargs)


# -- helpers -----------------------------------------------------------------

def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, data) -> Path:
    return atomic_write_text(path, json.dumps(data, indent=2, sort_keys=False) + "\n")


def _read_json(path, what: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise DataError(f"{what} {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: {exc}") from exc


def build_scene(cfg: PipelineConfig) -> Scene:
    if cfg.scene is not None:
        try:
            scene = load_scene(cfg.scene)
        except FileNotFoundError as exc:
            raise DataError(f"scene file {cfg.scene} not found") from exc
        return replace(scene, seed=cfg.seed)
    kwargs = {} if cfg.duration is None else {"duration": cfg.duration}
    return PRESETS[cfg.preset](cfg.seed, cfg.radar, **kwargs)


# -- stages ------------------------------------------------------------------

def run_simulate(cfg: PipelineConfig, out_dir) -> list[Path]:
    """Render the scene; write the cube, the scene, planted truth and reference waveforms."""
    out = _outdir(out_dir)
    scene = build_scene(cfg)
    scene.validate(cfg.radar)
    cfg.check_duration(scene.duration)
    cube = render_cube(scene, cfg.radar, workers=cfg.threads)
    if cfg.in_phase:
        cube = take_inphase(cube)
    written = list(save_cube(cube, out / "cube"))
    written.append(cfg.save(out / "config.json"))
    try:
        written.append(_write_json(out / "scene.json", scene_to_dict(scene)))
    except SceneError:
        log.info("scene has trace-backed targets; scene.json not written")

    ref_dir = _outdir(out / "references")
    humans = []
    for z, target in enumerate(scene.humans):
        entry = {"id": z, "distance_m": target.distance, "angle_deg": target.angle,
                 "range_bin": cfg.radar.nearest_range_bin(target.distance),
                 "angle_bin": cfg.radar.nearest_angle_bin(target.angle), "references": {}}
        if target.vibration.trace is None:
            waves = reference_waveforms(target, cfg.reference_rate, scene.duration)
            resp = waves.get("respiration", 0.0) + waves.get("harmonic", 0.0)
            heart = waves.get("heartbeat")
            for label, wave in (("respiration", resp), ("heartbeat", heart)):
                if wave is None or np.isscalar(wave):
                    continue
                path = ref_dir / f"human{z}_{label}.csv"
                save_vibration_trace(path, wave, cfg.reference_rate)
                written.append(path)
                entry["references"][label] = str(path.relative_to(out))
            t = np.arange(int(round(scene.duration * cfg.reference_rate))) / cfg.reference_rate
            rates = {c.label: c.instantaneous_frequency(t) * 60.0
                     for c in target.vibration.components if c.label in ("respiration",
                                                                          "heartbeat")}
            if len(rates) == 2:
                path = ref_dir / f"human{z}_rates.csv"
                lines = ["time_s,rr_bpm,hr_bpm"] + [
                    f"{a:.2f},{b:.4f},{c:.4f}"
                    for a, b, c in zip(t, rates["respiration"], rates["heartbeat"])]
                atomic_write_text(path, "\n".join(lines) + "\n")
                written.append(path)
                entry["references"]["rates"] = str(path.relative_to(out))
        else:
            log.warning("human %d is trace-backed: no per-label reference waveforms", z)
        humans.append(entry)
    truth = {"duration_s": scene.duration, "seed": scene.seed,
             "reference_rate_hz": cfg.reference_rate, "humans": humans,
             "clutter": [{"kind": t.kind, "distance_m": t.distance, "angle_deg": t.angle}
                         for t in scene.targets if t.kind != HUMAN]}
    written.append(_write_json(out / "truth.json", truth))
    return written


def _load_cube(cfg: PipelineConfig, cube_path):
    try:
        return load_cube(cube_path, cfg.radar)
    except FileNotFoundError as exc:
        raise DataError(f"cube {cube_path} not found") from exc
    except (SceneError, ValueError) as exc:
        raise DataError(str(exc)) from exc


def _truth_positions(truth_path):
    if truth_path is None or not Path(truth_path).exists():
        return None
    truth = _read_json(truth_path, "truth file")
    return [(h["distance_m"], h["angle_deg"]) for h in truth.get("humans", [])]


def run_localize(cfg: PipelineConfig, cube_path, out_dir, baseline: bool = False,
                 truth_path=None) -> list[Path]:
    """Joint sparse localization on the first T_loc seconds of the cube."""
    out = _outdir(out_dir)
    cube = _load_cube(cfg, cube_path)
    n_loc = int(round(cfg.schedule.t_loc * cfg.radar.frame_rate))
    if cube.n_frames < n_loc:
        raise DataError(f"cube of {cube.duration:.2f} s is shorter than T_loc={cfg.schedule.t_loc} s")
    A, B = build_range_dictionary(cfg.radar), build_angle_dictionary(cfg.radar)
    segment = cube.frames(0, n_loc)
    with threadpool_limits(limits=1):
        result = localize(segment, A, B, cfg.solver, cfg.detection, cfg.bands)
    normalized = normalized_roi_map(result.ramap, cfg.detection)
    written = [out / "support.csv", out / "map.csv", out / "map.pgm"]
    write_support(result.support, written[0])
    write_map_csv(result.ramap, written[1], normalized)
    write_map_pgm(normalized, written[2])
    truth = _truth_positions(truth_path)
    written.append(plot_range_angle_map(result.ramap, out / "map.png", result.support, truth,
                                        cfg.detection, "joint sparse recovery"))
    info = {"subjects": result.support.count, "iterations": result.solver.iterations,
            "converged": result.solver.converged}
    if baseline:
        fft = angle_fft_map(segment, A, B)
        support_fft = detect_support(fft, cfg.detection)
        norm_fft = normalized_roi_map(fft, cfg.detection)
        paths = [out / "support_fft.csv", out / "map_fft.csv", out / "map_fft.pgm"]
        write_support(support_fft, paths[0])
        write_map_csv(fft, paths[1], norm_fft)
        write_map_pgm(norm_fft, paths[2])
        paths.append(plot_range_angle_map(fft, out / "map_fft.png", support_fft, truth,
                                          cfg.detection, "Angle-FFT"))
        written += paths
        info["baseline_subjects"] = support_fft.count
    written.append(_write_json(out / "localize.json", info))
    written.append(cfg.save(out / "config.json"))
    return written


def run_monitor(cfg: PipelineConfig, cube_path, support_path, out_dir,
                baseline: bool = False) -> list[Path]:
    """Sliding-window rate estimation for every subject of a support file."""
    out = _outdir(out_dir)
    cube = _load_cube(cfg, cube_path)
    try:
        support = read_support(support_path, cfg.radar)
    except FileNotFoundError as exc:
        raise DataError(f"support file {support_path} not found") from exc
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    if cube.duration + 1e-9 < cfg.schedule.t_win:
        raise DataError(f"cube of {cube.duration:.2f} s is shorter than T_win={cfg.schedule.t_win} s")
    written = [cfg.save(out / "config.json")]
    if support.count == 0:
        log.warning("support is empty: no subjects to monitor")
        return written
    A, B = build_range_dictionary(cfg.radar), build_angle_dictionary(cfg.radar)
    methods = [("evsdr", "rates")] + ([("fft", "rates_fft")] if baseline else [])
    tracks = {}
    with threadpool_limits(limits=1):
        for method, stem in methods:
            tracks[method] = monitor(cube, support, A, B, cfg.schedule, cfg.refinement, method,
                                     cfg.respiration_band, cfg.heartbeat_band,
                                     workers=cfg.threads)
            for track in tracks[method]:
                path = out / f"{stem}_subject{track.subject}.csv"
                write_rate_track(track, path)
                written.append(path)
        for z, entry in enumerate(support.entries):
            phase = demodulate(beamform_support(cube, entry, A, B), remove_mean=False)
            path = out / f"vibration_subject{z}.csv"
            write_vibration(phase, cfg.radar.frame_rate, path)
            written.append(path)
    written.append(plot_rate_tracks(tracks["evsdr"], out / "rates.png"))
    return written


def _match(detected, planted):
    """Greedy nearest pairs in the Cartesian plane; returns {detected index: planted index}."""
    def xy(d, a):
        return np.array([d * np.cos(np.deg2rad(a)), d * np.sin(np.deg2rad(a))])
    pairs = sorted((float(np.linalg.norm(xy(*p) - xy(*q))), i, j)
                   for i, p in enumerate(detected) for j, q in enumerate(planted))
    used_i, used_j, out = set(), set(), {}
    for dist, i, j in pairs:
        if i in used_i or j in used_j:
            continue
        out[i] = j
        used_i.add(i)
        used_j.add(j)
    return out


def run_evaluate(cfg: PipelineConfig, rates_dir, truth_path, out_dir, support_path=None,
                 baseline: bool = False) -> list[Path]:
    """Score rate tracks against reference rates derived from planted waveforms."""
    out = _outdir(out_dir)
    rates_dir = Path(rates_dir)
    truth_path = Path(truth_path)
    truth = _read_json(truth_path, "truth file")
    support_path = Path(support_path) if support_path else rates_dir / "support.csv"
    try:
        support = read_support(support_path, cfg.radar)
    except FileNotFoundError as exc:
        raise DataError(f"support file {support_path} not found") from exc
    humans = [h for h in truth.get("humans", [])
              if "respiration" in h["references"] and "heartbeat" in h["references"]]
    if not humans:
        raise DataError(f"{truth_path}: no humans with reference waveforms")
    detected = [(e.distance, e.angle) for e in support.entries]
    matches = _match(detected, [(h["distance_m"], h["angle_deg"]) for h in humans])
    if not matches:
        raise MetricError("no detected subject could be matched to a planted human")
    for j, h in enumerate(humans):
        if j not in matches.values():
            log.warning("planted human %d at %.2f m / %g deg was not detected",
                        h["id"], h["distance_m"], h["angle_deg"])

    ref_rate = float(truth["reference_rate_hz"])
    s = cfg.schedule
    references = {}
    for j, h in enumerate(humans):
        refs = []
        for label, band in (("respiration", cfg.respiration_band),
                            ("heartbeat", cfg.heartbeat_band)):
            wave = np.loadtxt(truth_path.parent / h["references"][label], delimiter=",",
                              skiprows=1, ndmin=2)[:, 1]
            track = reference_rates(wave, ref_rate, band, s.t_win, s.t_int, label)
            refs.append((track.times, track.rates))
        references[j] = refs

    written = [cfg.save(out / "config.json")]
    lines = ["subject,human,distance_m,angle_deg,true_distance_m,true_angle_deg"]
    for i in sorted(matches):
        h = humans[matches[i]]
        lines.append(f"{i},{h['id']},{detected[i][0]:.6f},{detected[i][1]:g},"
                     f"{h['distance_m']:.6f},{h['angle_deg']:g}")
    written.append(atomic_write_text(out / "matching.csv", "\n".join(lines) + "\n"))

    variants = [("rates", out)] + ([("rates_fft", _outdir(out / "baseline"))] if baseline else [])
    for stem, dest in variants:
        tracks, hr_pairs, rr_pairs, hr_refs, rr_refs, ids = [], [], [], [], [], []
        for i in sorted(matches):
            path = rates_dir / f"{stem}_subject{i}.csv"
            try:
                track = read_rate_track(path)
            except OSError as exc:
                raise DataError(f"rate track {path} not found") from exc
            track.subject = i
            rr_ref, hr_ref = references[matches[i]]
            tracks.append(track)
            ids.append(i)
            rr_pairs.append((track.times, track.f_r))
            hr_pairs.append((track.times, track.f_h))
            rr_refs.append(rr_ref)
            hr_refs.append(hr_ref)
        hr = rmse_report(hr_pairs, hr_refs)
        rr = rmse_report(rr_pairs, rr_refs)
        written += write_reports(hr, rr, dest, ids)
        written.append(plot_aecdf(hr, rr, dest / "aecdf.png"))
        written.append(plot_rmse(hr, rr, dest / "rmse.png", ids))
        ref_map = {i: references[matches[i]] for i in ids}
        written.append(plot_rate_tracks(tracks, dest / "rates.png", ref_map))
    return written


def run_pipeline(cfg: PipelineConfig, out_dir, baseline: bool = False) -> list[Path]:
    """simulate -> localize -> monitor -> evaluate with every stage's artifacts kept."""
    out = _outdir(out_dir)
    stages = {name: out / name for name in ("simulate", "localize", "monitor", "evaluate")}
    written = [cfg.save(out / "config.json")]
    written += run_simulate(cfg, stages["simulate"])
    cube = stages["simulate"] / "cube"
    truth = stages["simulate"] / "truth.json"
    written += run_localize(cfg, cube, stages["localize"], baseline, truth)
    support = stages["localize"] / "support.csv"
    written += run_monitor(cfg, cube, support, stages["monitor"], baseline)
    if read_support(support).count == 0:
        log.warning("nothing detected: evaluation skipped")
        return written
    written += run_evaluate(cfg, stages["monitor"], truth, stages["evaluate"], support,
                            baseline)
    return written
