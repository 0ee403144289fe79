import json
import logging

import numpy as np
import pytest

from radarvitals.cli import main
from radarvitals.config import ConfigError, RadarConfig
from radarvitals.evaluation import reference_rates
from radarvitals.localization import Support, SupportEntry, read_support, write_support
from radarvitals.pipeline import PipelineConfig
from radarvitals.scenarios import C3_POSITIONS
from radarvitals.simulator import (STATIC_CLUTTER, Scene, TargetSpec, human_vibration,
                                   scene_to_dict)
from radarvitals.vitals import RateTrack, read_rate_track, write_rate_track


def run(argv, capsys):
    """Exit code and the parsed JSON error line (None on success)."""
    try:
        code = main([str(a) for a in argv])
    except SystemExit as exc:
        code = exc.code
    err = capsys.readouterr().err.strip().splitlines()
    record = json.loads(err[-1]) if code and err else None
    return code, record


def write_scene(path, targets, duration, sigma=0.0):
    path.write_text(json.dumps(scene_to_dict(Scene(tuple(targets), sigma, duration))))
    return path


def write_config(path, **values):
    path.write_text(json.dumps(values))
    return path


def on_grid(m, p, cfg=RadarConfig()):
    return m * cfg.range_bin_spacing, -90.0 + p * cfg.angle_spacing


@pytest.fixture(scope="module")
def one_subject(tmp_path_factory):
    """A 31 s single-subject recording with its support file."""
    root = tmp_path_factory.mktemp("one")
    d, a = on_grid(30, 95)
    scene = write_scene(root / "scene.json",
                        [TargetSpec(d, a, 0.1, human_vibration(15, 72)),
                         TargetSpec(1.5, 30.0, 1.0, kind=STATIC_CLUTTER)], 31.0, sigma=0.2)
    assert main(["simulate", "--scene", str(scene), "--out", str(root / "sim")]) == 0
    support = Support((SupportEntry(30, 95, d, a, 1.0),))
    write_support(support, root / "support.csv")
    return root


# -- configuration -----------------------------------------------------------

def test_config_roundtrip(tmp_path):
    cfg = PipelineConfig(seed=3, threads=2, preset="c3", duration=8.0)
    cfg.save(tmp_path / "c.json")
    back = PipelineConfig.load(tmp_path / "c.json")
    assert back == cfg
    assert set(json.loads((tmp_path / "c.json").read_text())) >= {
        "radar", "solver", "bands", "schedule", "detection", "refinement", "seed"}


def test_relative_scene_resolves_against_config(tmp_path):
    (tmp_path / "sub").mkdir()
    write_config(tmp_path / "sub" / "c.json", scene="s.json")
    assert PipelineConfig.load(tmp_path / "sub" / "c.json").scene == str(tmp_path / "sub" / "s.json")


@pytest.mark.parametrize("values", [
    {"bands": {"respiration_hz": [0.1, 0.9], "heartbeat_hz": [0.83, 1.67]}},
    {"bands": {"respiration_hz": [0.5, 0.1]}},
    {"schedule": {"t_loc": 40.0, "t_win": 30.0}},
    {"schedule": {"t_int": 0.0}},
    {"preset": "c9"},
    {"preset": None},
    {"threads": 0},
    {"colour": "blue"},
    {"solver": {"gamma": 1.0, "momentum": 2}},
    {"radar": {"receivers": 0}},
])
def test_invalid_configs(values):
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict(values)


def test_overrides_win(tmp_path, capsys, one_subject):
    cfg = write_config(tmp_path / "c.json", seed=1, output_dir=str(tmp_path / "a"))
    code, _ = run(["monitor", "--config", cfg, "--seed", 9, "--out", tmp_path / "b",
                   "--cube", one_subject / "sim" / "cube",
                   "--support", one_subject / "support.csv"], capsys)
    assert code == 0
    echoed = json.loads((tmp_path / "b" / "config.json").read_text())
    assert echoed["seed"] == 9 and not (tmp_path / "a").exists()


# -- exit codes and error lines ----------------------------------------------

def test_usage_error(capsys):
    code, record = run(["frobnicate"], capsys)
    assert code == 2 and record["error"] == "config" and record["exit_code"] == 2


def test_config_error_line(tmp_path, capsys):
    bad = write_config(tmp_path / "bad.json", schedule={"t_loc": 50.0})
    code, record = run(["simulate", "--config", bad, "--out", tmp_path], capsys)
    assert code == 2
    assert record == {"error": "config", "exit_code": 2, "type": "ConfigError",
                      "message": record["message"]}
    assert "T_loc" in record["message"]


def test_broken_json_config(tmp_path, capsys):
    (tmp_path / "c.json").write_text("{nope")
    code, record = run(["simulate", "--config", tmp_path / "c.json"], capsys)
    assert code == 2 and record["type"] == "ConfigError"


def test_threads_flag_validated(tmp_path, capsys):
    code, _ = run(["simulate", "--threads", 0, "--out", tmp_path], capsys)
    assert code == 2


def test_duration_zero(tmp_path, capsys):
    code, record = run(["simulate", "--preset", "c3", "--duration", 0, "--out", tmp_path],
                       capsys)
    assert code in (2, 3) and record["exit_code"] == code


def test_missing_cube(tmp_path, capsys):
    code, record = run(["localize", "--cube", tmp_path / "nothing", "--out", tmp_path], capsys)
    assert code == 3 and record["error"] == "data"


def test_missing_scene_file(tmp_path, capsys):
    code, record = run(["simulate", "--scene", tmp_path / "none.json", "--out", tmp_path],
                       capsys)
    assert code == 3 and "not found" in record["message"]


# -- simulate ----------------------------------------------------------------

def test_simulate_c3_preset(tmp_path, capsys):
    config = write_config(tmp_path / "c.json", schedule={"t_loc": 1.0, "t_win": 1.0})
    code, _ = run(["simulate", "--config", config, "--preset", "c3", "--duration", 1.0,
                   "--out", tmp_path / "sim"], capsys)
    assert code == 0
    truth = json.loads((tmp_path / "sim" / "truth.json").read_text())
    assert [(h["distance_m"], h["angle_deg"]) for h in truth["humans"]] == list(C3_POSITIONS)
    assert len(truth["clutter"]) == 2
    for h in truth["humans"]:
        assert (tmp_path / "sim" / h["references"]["heartbeat"]).exists()


def test_simulate_same_seed_identical(tmp_path, capsys):
    config = write_config(tmp_path / "c.json", schedule={"t_loc": 1.0, "t_win": 1.0})
    for name in ("a", "b"):
        code, _ = run(["simulate", "--config", config, "--preset", "c4", "--duration", 2.0,
                       "--seed", 5, "--out", tmp_path / name], capsys)
        assert code == 0
    for f in ("cube.bin", "cube.hdr", "truth.json", "references/human0_heartbeat.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_scene_shorter_than_window(tmp_path, capsys):
    code, record = run(["simulate", "--preset", "c4", "--duration", 10, "--out", tmp_path],
                       capsys)
    assert code == 2 and "T_win" in record["message"]


# -- localize ----------------------------------------------------------------

def test_localize_zero_noise_three_targets(tmp_path, capsys):
    rates = ((14, 70), (17, 80), (19, 64))
    scene = write_scene(tmp_path / "s.json",
                        [TargetSpec(d, a, 0.1, human_vibration(r, h))
                         for (d, a), (r, h) in zip(C3_POSITIONS, rates)], 5.0)
    config = write_config(tmp_path / "c.json", schedule={"t_loc": 5.0, "t_win": 5.0})
    assert run(["simulate", "--config", config, "--scene", scene,
                "--out", tmp_path / "sim"], capsys)[0] == 0
    code, _ = run(["localize", "--config", config, "--cube", tmp_path / "sim" / "cube",
                   "--truth", tmp_path / "sim" / "truth.json", "--baseline",
                   "--out", tmp_path / "loc"], capsys)
    assert code == 0
    assert read_support(tmp_path / "loc" / "support.csv").count == 3
    for name in ("map.csv", "map.pgm", "map.png", "support_fft.csv", "map_fft.csv",
                 "map_fft.pgm", "map_fft.png", "localize.json"):
        assert (tmp_path / "loc" / name).stat().st_size > 0
    info = json.loads((tmp_path / "loc" / "localize.json").read_text())
    assert info["subjects"] == 3 and "baseline_subjects" in info


def test_localize_empty_roi(tmp_path, capsys, one_subject):
    config = write_config(tmp_path / "c.json", detection={"roi_distance": [5.0, 6.0]})
    code, record = run(["localize", "--config", config, "--cube", one_subject / "sim" / "cube",
                        "--out", tmp_path], capsys)
    assert code == 3 and "ROI" in record["message"]


def test_localize_short_cube(tmp_path, capsys, one_subject):
    config = write_config(tmp_path / "c.json", schedule={"t_loc": 35.0, "t_win": 40.0})
    code, record = run(["localize", "--config", config, "--cube", one_subject / "sim" / "cube",
                        "--out", tmp_path], capsys)
    assert code == 3


# -- monitor -----------------------------------------------------------------

def test_monitor_with_baseline(tmp_path, capsys, one_subject):
    code, _ = run(["monitor", "--cube", one_subject / "sim" / "cube",
                   "--support", one_subject / "support.csv", "--baseline",
                   "--out", tmp_path], capsys)
    assert code == 0
    track = read_rate_track(tmp_path / "rates_subject0.csv")
    assert len(track) == 21
    assert np.all(np.abs(track.f_h - 72) <= 1) and np.all(np.abs(track.f_r - 15) <= 1)
    assert len(read_rate_track(tmp_path / "rates_fft_subject0.csv")) == 21
    assert (tmp_path / "vibration_subject0.csv").exists()
    assert (tmp_path / "rates.png").exists()


def test_monitor_empty_support(tmp_path, capsys, caplog, one_subject):
    write_support(Support(), tmp_path / "empty.csv")
    with caplog.at_level(logging.WARNING):
        code, _ = run(["monitor", "--cube", one_subject / "sim" / "cube",
                       "--support", tmp_path / "empty.csv", "--out", tmp_path / "m"], capsys)
    assert code == 0
    assert not list((tmp_path / "m").glob("rates_*.csv"))
    assert "empty" in caplog.text


def test_monitor_support_outside_grid(tmp_path, capsys, one_subject):
    write_support(Support((SupportEntry(150, 10, 1.0, 0.0, 1.0),)), tmp_path / "bad.csv")
    code, _ = run(["monitor", "--cube", one_subject / "sim" / "cube",
                   "--support", tmp_path / "bad.csv", "--out", tmp_path], capsys)
    assert code == 3


@pytest.mark.slow
def test_monitor_paper_schedule_count(tmp_path, capsys):
    d, a = on_grid(30, 95)
    scene = write_scene(tmp_path / "s.json", [TargetSpec(d, a, 0.1, human_vibration(15, 72))],
                        120.0, sigma=0.2)
    assert run(["simulate", "--scene", scene, "--out", tmp_path / "sim"], capsys)[0] == 0
    write_support(Support((SupportEntry(30, 95, d, a, 1.0),)), tmp_path / "support.csv")
    code, _ = run(["monitor", "--cube", tmp_path / "sim" / "cube",
                   "--support", tmp_path / "support.csv", "--out", tmp_path / "m"], capsys)
    assert code == 0
    assert len(read_rate_track(tmp_path / "m" / "rates_subject0.csv")) == 1801


# -- evaluate ----------------------------------------------------------------

def fake_tracks(one_subject, dest, hr_error=None, shift=0.0):
    truth_dir = one_subject / "sim"
    truth = json.loads((truth_dir / "truth.json").read_text())
    refs = truth["humans"][0]["references"]
    out = []
    for label, band in (("respiration", (0.1, 0.5)), ("heartbeat", (0.83, 1.67))):
        wave = np.loadtxt(truth_dir / refs[label], delimiter=",", skiprows=1)[:, 1]
        out.append(reference_rates(wave, truth["reference_rate_hz"], band, 30.0, 0.05))
    rr, hr = out
    f_h = hr.rates + (0 if hr_error is None else hr_error)
    bands = np.zeros((rr.times.size, 2))
    dest.mkdir(exist_ok=True)
    write_rate_track(RateTrack(0, rr.times + shift, rr.rates, f_h, rr.rates, f_h, bands, bands),
                     dest / "rates_subject0.csv")
    return dest


def test_evaluate_perfect_tracks(tmp_path, capsys, one_subject):
    rates = fake_tracks(one_subject, tmp_path / "r")
    code, _ = run(["evaluate", "--rates", rates, "--truth", one_subject / "sim" / "truth.json",
                   "--support", one_subject / "support.csv", "--out", tmp_path / "e"], capsys)
    assert code == 0
    summary = (tmp_path / "e" / "summary.txt").read_text()
    assert "HR: ASR2=100.00%" in summary and "RR: ASR2=100.00%" in summary
    for name in ("aecdf.csv", "rmse.csv", "matching.csv", "aecdf.png", "rmse.png", "rates.png"):
        assert (tmp_path / "e" / name).exists()


def test_evaluate_known_errors(tmp_path, capsys, one_subject):
    err = np.where(np.arange(21) % 2 == 0, 3.0, -4.0)
    rates = fake_tracks(one_subject, tmp_path / "r", hr_error=err)
    code, _ = run(["evaluate", "--rates", rates, "--truth", one_subject / "sim" / "truth.json",
                   "--support", one_subject / "support.csv", "--out", tmp_path / "e"], capsys)
    assert code == 0
    row = (tmp_path / "e" / "rmse.csv").read_text().splitlines()[1].split(",")
    expected = np.sqrt(np.mean(err ** 2))
    assert float(row[1]) == pytest.approx(expected, abs=1e-4)
    assert float(row[2]) == 0.0


def test_evaluate_misaligned(tmp_path, capsys, one_subject):
    rates = fake_tracks(one_subject, tmp_path / "r", shift=0.5)
    code, record = run(["evaluate", "--rates", rates,
                        "--truth", one_subject / "sim" / "truth.json",
                        "--support", one_subject / "support.csv", "--out", tmp_path / "e"],
                       capsys)
    assert code == 3 and "misaligned" in record["message"]


# -- pipeline ----------------------------------------------------------------

def test_pipeline_writes_every_stage(tmp_path, capsys, one_subject):
    code, _ = run(["pipeline", "--scene", one_subject / "scene.json", "--threads", 2,
                   "--out", tmp_path], capsys)
    assert code == 0
    for stage in ("simulate", "localize", "monitor", "evaluate"):
        assert (tmp_path / stage / "config.json").exists()
    assert (tmp_path / "evaluate" / "summary.txt").exists()
    assert read_support(tmp_path / "localize" / "support.csv").count >= 1
