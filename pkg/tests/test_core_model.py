import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from radarvitals.config import SPEED_OF_LIGHT, ConfigError, RadarConfig, build_radar_config
from radarvitals.dictionaries import (DictionaryError, build_angle_dictionary,
                                      build_range_dictionary, build_vital_dictionary,
                                      split_harmonics)


@pytest.fixture(scope="module")
def cfg():
    return RadarConfig()


def test_table1_bandwidth_and_resolution(cfg):
    assert cfg.bandwidth == pytest.approx(3.99e9)
    assert cfg.range_resolution == pytest.approx(0.0375, abs=1e-4)


def test_table1_distance_grid(cfg):
    # c * f_ADC / (2 S N_bar), evaluated by hand
    step = 299_792_458 * 4e6 / (2 * 70e12 * 200)
    assert cfg.range_bin_spacing == pytest.approx(step)
    assert cfg.d_min == pytest.approx(0.0429, abs=1e-4)
    assert cfg.d_max == pytest.approx(4.24, abs=5e-3)
    assert cfg.range_bins == 100


def test_angle_bins():
    assert RadarConfig(angle_spacing=1).angle_bins == 180
    assert RadarConfig(angle_spacing=2.5).angle_bins == 72


@pytest.mark.parametrize("kwargs", [
    dict(frame_period=0),
    dict(adc_rate=-1),
    dict(angle_spacing=7),
    dict(range_bins=300),
    dict(receivers=0),
])
def test_invalid_config(kwargs):
    with pytest.raises(ConfigError):
        RadarConfig(**kwargs)


def test_config_file_roundtrip(tmp_path, cfg):
    path = tmp_path / "radar.json"
    cfg.save(path)
    data = json.loads(path.read_text())
    assert set(data) == {"lambda_max", "T_c", "f_ADC", "S", "T_s", "N_bar", "G", "K",
                         "delta_theta", "M"}
    assert RadarConfig.load(path) == cfg


def test_build_from_table_symbols():
    cfg = build_radar_config(T_c=57e-6, f_ADC=4e6, S=70e12, T_s=0.05, N_bar=200, G=40, K=4)
    assert cfg.receivers == 4 and cfg.range_bins == 100


def test_unknown_key_rejected():
    with pytest.raises(ConfigError):
        RadarConfig.from_dict({"T_c": 57e-6, "bogus": 1})


# -- range / angle dictionaries ----------------------------------------------

def test_range_dictionary(cfg):
    A = build_range_dictionary(cfg)
    assert A.matrix.shape == (200, 100)
    np.testing.assert_array_equal(A.matrix[:, 0], 1)
    assert A.bin_frequencies[1] == pytest.approx(20e3)
    assert A.bin_distances[1] == pytest.approx(SPEED_OF_LIGHT * 20e3 / (2 * 70e12))
    np.testing.assert_allclose(np.abs(A.matrix), 1, atol=1e-12)
    gram = A.matrix.conj().T @ A.matrix
    np.testing.assert_allclose(gram, 200 * np.eye(100), atol=1e-9 * 200)


def test_angle_dictionary():
    cfg = RadarConfig(receivers=4)
    B = build_angle_dictionary(cfg)
    assert B.matrix.shape == (180, 4)
    assert B.receiver_major.shape == (4, 180)
    zero = np.flatnonzero(B.grid_angles == 0)[0]
    np.testing.assert_allclose(B.matrix[zero], 1)
    np.testing.assert_allclose(B.matrix[0], np.exp(-1j * np.pi * np.arange(4)), atol=1e-12)
    np.testing.assert_allclose(np.abs(B.matrix), 1, atol=1e-12)
    assert B.grid_angles[0] == -90 and B.grid_angles[-1] == 89


def test_dictionaries_deterministic(cfg):
    assert np.array_equal(build_range_dictionary(cfg).matrix, build_range_dictionary(cfg).matrix)
    assert np.array_equal(build_angle_dictionary(cfg).matrix, build_angle_dictionary(cfg).matrix)


# -- vital dictionaries ------------------------------------------------------

def _count_integer_bpm(lo_hz, hi_hz):
    # counting oracle: integer bpm values inside [lo, hi] Hz
    return [b for b in range(0, 600) if lo_hz * 60 - 1e-9 <= b <= hi_hz * 60 + 1e-9]


def test_vital_dictionary_heart_band():
    D = build_vital_dictionary((0.83, 1.67), 20.0, 600)
    expected = _count_integer_bpm(0.83, 1.67)
    assert expected[0] == 50 and expected[-1] == 100
    assert len(D) == 51 == len(expected)
    np.testing.assert_allclose(D.atom_bpm, expected)
    assert D.matrix.shape == (600, 51)
    l = np.arange(600)
    np.testing.assert_allclose(D.matrix[:, 0], np.cos(2 * np.pi * (50 / 60) * l / 20),
                               atol=1e-9)


def test_vital_dictionary_resp_band():
    D = build_vital_dictionary((0.1, 0.5), 20.0, 100)
    assert len(D) == 25
    np.testing.assert_allclose(D.atom_bpm, np.arange(6, 31))
    assert D.grid_step == pytest.approx(1 / 60)


def test_vital_dictionary_empty_band():
    with pytest.raises(DictionaryError):
        build_vital_dictionary((0.101, 0.1015), 20.0, 100)


@given(lo=st.floats(0.0, 9.0), width=st.floats(0.05, 1.0), fs=st.sampled_from([10.0, 20.0, 25.0]))
@settings(max_examples=60, deadline=None)
def test_vital_grid_spacing(lo, width, fs):
    hi = min(lo + width, fs / 2 - 0.01)
    if hi - lo < 1 / 60 or lo >= fs / 2:
        return
    D = build_vital_dictionary((lo, hi), fs, 8)
    f = D.atom_frequencies
    assert np.all(np.diff(f) > 0)
    np.testing.assert_allclose(np.diff(f), fs / (60 * fs))
    assert f[0] >= lo - 1e-9 and f[-1] <= hi + 1e-9


# -- harmonic split ----------------------------------------------------------

@pytest.fixture(scope="module")
def heart():
    return build_vital_dictionary((0.83, 1.67), 20.0, 600)


def test_split_18bpm(heart):
    split = split_harmonics(18 / 60, heart)
    np.testing.assert_allclose(split.interferers, [54, 72, 90])
    assert len(split.clean) == 48
    assert split.interferer_matrix.shape == (600, 3)


def test_split_no_multiple(heart):
    split = split_harmonics(0.9 * 20.0, heart)
    assert split.interferers.size == 0
    np.testing.assert_allclose(split.clean, heart.atom_bpm)


def test_split_all_harmonics_is_error():
    tiny = build_vital_dictionary((1.0, 1.0), 20.0, 50)
    with pytest.raises(DictionaryError):
        split_harmonics(0.5, tiny)


@given(f_r=st.floats(0.1, 0.5))
@settings(max_examples=100, deadline=None)
def test_split_is_partition(heart, f_r):
    split = split_harmonics(f_r, heart)
    both = np.sort(np.concatenate([split.interferers, split.clean]))
    np.testing.assert_allclose(both, heart.atom_bpm)
    assert len(np.intersect1d(split.interferers, split.clean)) == 0
    step_bpm = 1.0
    for f in split.interferers:
        mults = np.arange(2, 40) * f_r * 60
        assert np.min(np.abs(f - mults)) <= step_bpm / 2 + 1e-9
