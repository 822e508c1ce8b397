import numpy as np
import pytest

from vitalradar.errors import ConfigError, GeometryError
from vitalradar.radar import (GeometryScene, RadarConfig, angle_resolution,
                              derive_params, load_radar_config, min_elevation,
                              save_radar_config, SPEED_OF_LIGHT)


def test_derived_limits_of_default_profile(table1):
    d = derive_params(table1)
    assert d.r_max_constrained_m == pytest.approx(15.0, rel=0.005)
    assert d.range_resolution_m == pytest.approx(0.058, abs=1e-3)
    assert d.slow_time_rate_hz == 20.0
    assert d.freq_resolution_hz == 0.0390625
    assert d.virtual_channels == 8
    assert d.lambda_max_m == pytest.approx(SPEED_OF_LIGHT / 77e9)
    assert d.r_max_m == pytest.approx(SPEED_OF_LIGHT * 100e-6 / 2)
    assert d.range_bin_hz == pytest.approx(6e6 / 512)
    assert d.range_bin_m == d.range_resolution_m


def test_config_invariants_enforced():
    with pytest.raises(ConfigError, match="bandwidth_hz"):
        RadarConfig(f_min_hz=77e9, f_max_hz=78e9, bandwidth_hz=2e9,
                    chirp_duration_s=1e-4, chirp_period_s=1e-3,
                    chirp_slope_hz_per_s=2e13, num_chirps=8, adc_samples=8,
                    adc_rate_sps=1e6, n_tx=1, n_rx=1)
    with pytest.raises(ConfigError, match="chirp_duration_s"):
        RadarConfig.from_primitives(77e9, 78e9, t_m_s=2e-3, t_c_s=1e-3,
                                    num_chirps=8, adc_samples=8,
                                    adc_rate_sps=1e6, n_tx=1, n_rx=1)
    with pytest.raises(ConfigError, match="num_chirps"):
        RadarConfig.from_primitives(77e9, 78e9, 1e-4, 1e-3, num_chirps=0,
                                    adc_samples=8, adc_rate_sps=1e6, n_tx=1, n_rx=1)


def test_rmax_constrained_monotone_in_adc_rate():
    # Weakly increasing with f_adc, capped at the sweep-time limit.
    prev = 0.0
    base = dict(f_min_hz=77e9, f_max_hz=78e9, t_m_s=1e-4, t_c_s=1e-3,
                num_chirps=8, adc_samples=64, n_tx=1, n_rx=1)
    for f_adc in (1e6, 1e7, 1e8, 1e9, 2e9, 4e9, 8e9):
        d = derive_params(RadarConfig.from_primitives(adc_rate_sps=f_adc, **base))
        assert d.r_max_constrained_m >= prev
        assert d.r_max_constrained_m <= d.r_max_m + 1e-9
        prev = d.r_max_constrained_m
    assert prev == pytest.approx(derive_params(
        RadarConfig.from_primitives(adc_rate_sps=8e9, **base)).r_max_m)


def test_range_resolution_decreases_with_samples():
    base = dict(f_min_hz=77e9, f_max_hz=78e9, t_m_s=1e-4, t_c_s=1e-3,
                num_chirps=8, adc_rate_sps=1e6, n_tx=1, n_rx=1)
    res = [derive_params(RadarConfig.from_primitives(adc_samples=n, **base)).range_resolution_m
           for n in (64, 128, 256, 512)]
    assert all(a > b for a, b in zip(res, res[1:]))


@pytest.mark.parametrize("n_tx,n_rx,expected", [(2, 4, 14.3), (1, 1, 114.6), (2, 8, 7.2)])
def test_angle_resolution(n_tx, n_rx, expected):
    assert angle_resolution(n_tx, n_rx) == expected


def test_angle_resolution_nominal_15_for_2x4():
    # Reported nominal figure for the 8-channel virtual array.
    assert abs(angle_resolution(2, 4) - 15.0) <= 1.0


def test_min_elevation_single_subject():
    per, h_min = min_elevation(GeometryScene(subjects=((2.0, 0.5),)))
    assert per == [0.0]
    assert h_min == 0.0


def test_min_elevation_two_subjects():
    per, h_min = min_elevation(GeometryScene(subjects=((1.0, 0.4), (2.0, 0.3))))
    assert per[1] == pytest.approx(0.4 * 2.0 / (2.0 - 1.0))
    assert h_min == pytest.approx(0.8)


def test_min_elevation_three_subject_worked_example():
    per, h_min = min_elevation(GeometryScene(subjects=((1.0, 0.4), (2.0, 0.3), (3.0, 0.4))))
    # h_3 = max(0.4*3/2, 0.3*3/1) = 0.9, which also dominates h_2 = 0.8
    assert per[2] == pytest.approx(max(0.4 * 3.0 / 2.0, 0.3 * 3.0 / 1.0))
    assert h_min == pytest.approx(0.9)


def test_min_elevation_rejects_bad_geometry():
    with pytest.raises(GeometryError):
        GeometryScene(subjects=((2.0, 0.4), (2.0, 0.3)))
    with pytest.raises(GeometryError):
        GeometryScene(subjects=((3.0, 0.4), (2.0, 0.3)))
    with pytest.raises(GeometryError):
        GeometryScene(subjects=((1.0, -0.1),))


def test_min_elevation_scale_invariance_and_monotonicity(rng):
    for _ in range(200):
        n = rng.integers(1, 6)
        ranges = np.sort(rng.uniform(0.5, 8.0, n))
        while np.any(np.diff(ranges) < 1e-3):
            ranges = np.sort(rng.uniform(0.5, 8.0, n))
        heights = rng.uniform(0.0, 1.0, n)
        scene = GeometryScene(subjects=tuple(zip(ranges, heights)))
        _, h = min_elevation(scene)
        scale = rng.uniform(0.1, 10.0)
        _, h_scaled = min_elevation(
            GeometryScene(subjects=tuple(zip(ranges * scale, heights * scale))))
        assert h_scaled == pytest.approx(scale * h, rel=1e-9)
        # appending a farther subject never lowers the requirement
        _, h_more = min_elevation(GeometryScene(
            subjects=tuple(zip(ranges, heights)) + ((ranges[-1] + 1.0, 0.2),)))
        assert h_more >= h - 1e-12


def test_config_file_roundtrip(tmp_path, table1):
    path = tmp_path / "radar.cfg"
    save_radar_config(table1, path)
    loaded = load_radar_config(path)
    assert loaded == table1


def test_config_file_errors(tmp_path):
    path = tmp_path / "radar.cfg"
    path.write_text("f_min_hz = 77e9\n")
    with pytest.raises(ConfigError, match="missing"):
        load_radar_config(path)
    path.write_text(
        "f_min_hz=77e9\nf_max_hz=78e9\nt_m_s=1e-4\nt_c_s=1e-3\nnum_chirps=8\n"
        "adc_samples=64\nadc_rate_sps=1e6\nn_tx=1\nn_rx=1\nbogus=1\n")
    with pytest.raises(ConfigError, match="unknown"):
        load_radar_config(path)
    path.write_text(
        "# comment line\nf_min_hz=77e9\nf_max_hz=78e9\nt_m_s=1e-4\nt_c_s=1e-3\n"
        "num_chirps=8\nadc_samples=64  # trailing comment\nadc_rate_sps=1e6\nn_tx=1\nn_rx=1\n")
    cfg = load_radar_config(path)
    assert cfg.adc_samples == 64
