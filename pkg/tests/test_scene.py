import math

import numpy as np
import pytest

from conftest import small_config
from vitalradar.errors import SceneError
from vitalradar.radar import SPEED_OF_LIGHT, derive_params
from vitalradar.scene import (ClutterSpec, PRESET_NAMES, SceneDocument, SimScene,
                              SubjectSpec, chest_displacement, load_scene,
                              save_scene, scenario_preset, synthesize)

FS = 20.0
TC = 1.0 / FS


def subject(**kw):
    base = dict(range_m=1.0, azimuth_deg=0.0, br_hz=0.25, hr_hz=1.1,
                breath_amplitude_m=5e-3, heart_amplitude_m=2e-4)
    base.update(kw)
    return SubjectSpec(**base)


def test_subject_spec_validation():
    with pytest.raises(SceneError):
        subject(br_hz=0.7)
    with pytest.raises(SceneError):
        subject(hr_hz=0.5)
    with pytest.raises(SceneError):
        subject(breath_amplitude_m=0.05)
    with pytest.raises(SceneError):
        subject(heart_amplitude_m=1e-3)
    # zero amplitude allowed as degenerate motionless case
    subject(breath_amplitude_m=0.0, heart_amplitude_m=0.0)


def test_chest_displacement_zero_amplitudes():
    s = subject(breath_amplitude_m=0.0, heart_amplitude_m=0.0)
    x = chest_displacement(s, 128, TC, seed=0)
    assert np.all(x == 0.0)


def test_chest_displacement_pure_tone():
    s = subject(heart_amplitude_m=0.0)
    m = 256
    x = chest_displacement(s, m, TC, seed=0)
    spec = np.abs(np.fft.rfft(x))
    assert np.argmax(spec) == round(0.25 * m * TC)


def test_chest_displacement_harmonics_ratio():
    s = subject(heart_amplitude_m=0.0, breath_harmonics=((2, 0.3),))
    m = 640  # 32 s window: both 0.25 and 0.5 Hz are bin-aligned
    x = chest_displacement(s, m, TC, seed=0)
    spec = np.abs(np.fft.rfft(x))
    k1 = round(0.25 * m * TC)
    assert spec[2 * k1] / spec[k1] == pytest.approx(0.3, rel=1e-6)


def test_chest_displacement_deterministic():
    s = subject(posture_jitter_std_m=2e-3)
    a = chest_displacement(s, 128, TC, seed=42)
    b = chest_displacement(s, 128, TC, seed=42)
    c = chest_displacement(s, 128, TC, seed=43)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert np.std(a) > 0


def test_static_reflector_lands_on_expected_bin(table1):
    cfg = small_config(num_chirps=4, adc_samples=512, n_tx=1, n_rx=1)
    scene = SimScene(clutter=ClutterSpec(((1.0, 0.0, 1.0),)), subjects=())
    cube = synthesize(scene, cfg)
    spectrum = np.abs(np.fft.fft(cube.samples[0, 0, :]))[:256]
    f_b = 2 * cfg.chirp_slope_hz_per_s * 1.0 / SPEED_OF_LIGHT
    expected_bin = round(f_b * cfg.adc_samples / cfg.adc_rate_sps)
    assert expected_bin == 17
    assert np.argmax(spectrum) == expected_bin


def test_synthesize_deterministic():
    cfg = small_config(num_chirps=32, adc_samples=64)
    scene = SimScene(subjects=(subject(posture_jitter_std_m=1e-3),), snr_db=15.0, seed=9)
    a = synthesize(scene, cfg)
    b = synthesize(scene, cfg)
    assert np.array_equal(a.samples, b.samples)


def test_synthesize_linear_in_subjects():
    cfg = small_config(num_chirps=32, adc_samples=64)
    s1 = subject(range_m=1.0, posture_jitter_std_m=5e-4)
    s2 = subject(range_m=2.5, br_hz=0.3, hr_hz=1.4, posture_jitter_std_m=1e-3)
    both = synthesize(SimScene(subjects=(s1, s2), seed=5), cfg)
    only1 = synthesize(SimScene(subjects=(s1,), seed=5), cfg)
    only2 = synthesize(SimScene(subjects=(s2,), seed=5), cfg)
    total = only1.samples + only2.samples
    scale = np.abs(total).max()
    assert np.abs(both.samples - total).max() <= 1e-9 * scale


def test_empty_scene_noise_power():
    cfg = small_config(num_chirps=64, adc_samples=128)
    scene = SimScene(subjects=(), snr_db=10.0, seed=3)
    cube = synthesize(scene, cfg)
    # reference power 1.0 for subject-free scenes -> noise variance 10^-1
    measured = np.mean(np.abs(cube.samples) ** 2)
    assert measured == pytest.approx(0.1, rel=0.05)


def test_noiseless_phase_matches_displacement(table1):
    cfg = small_config(num_chirps=128, adc_samples=512)
    s = subject()
    scene = SimScene(subjects=(s,), seed=2)
    cube = synthesize(scene, cfg)
    derived = derive_params(cfg)
    series = np.fft.fft(cube.samples[:, 0, :], axis=1)[:, 17]
    from vitalradar.scene import _SUBJECT_TAG, _subject_stream_key
    x = chest_displacement(s, 128, cfg.chirp_period_s,
                           (2, _SUBJECT_TAG, _subject_stream_key(s)))
    expected = 4 * np.pi * x / derived.lambda_max_m
    observed = np.unwrap(np.angle(series))
    dev = observed - expected
    assert np.abs(dev - dev.mean()).max() < 1e-6


def test_energy_ordering_with_range():
    cfg = small_config(num_chirps=4, adc_samples=512)
    peaks = []
    for r in (1.0, 2.0, 4.0):
        cube = synthesize(SimScene(subjects=(subject(range_m=r),), seed=1), cfg)
        peaks.append(np.abs(np.fft.fft(cube.samples[0, 0, :]))[:256].max())
    assert peaks[0] > peaks[1] > peaks[2]


def test_subject_beyond_max_range_rejected():
    cfg = small_config()
    with pytest.raises(SceneError, match="exceeds"):
        synthesize(SimScene(subjects=(subject(range_m=20.0),)), cfg)


def test_close_pair_warns():
    cfg = small_config()
    scene = SimScene(subjects=(subject(), subject(br_hz=0.3, hr_hz=1.5)))
    with pytest.warns(UserWarning, match="merge"):
        synthesize(scene, cfg)


def test_presets_cover_names():
    for name in PRESET_NAMES:
        scenes = scenario_preset(name)
        assert len(scenes) >= 1
    with pytest.raises(SceneError, match="zigzag_five"):
        scenario_preset("nope")


def test_distance_sweep_preset():
    scenes = scenario_preset("distance_sweep_1..7m")
    assert len(scenes) == 7
    ranges = [sc.subjects[0].range_m for _, sc in scenes]
    assert ranges == [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]
    assert all(len(sc.subjects) == 1 for _, sc in scenes)


def test_azimuth_sweep_preset():
    (_, scene), = scenario_preset("azimuth_sweep_0..60")
    azimuths = sorted(s.azimuth_deg for s in scene.subjects)
    assert azimuths == [-60.0, -40.0, -20.0, 0.0, 20.0, 40.0, 60.0]
    assert all(s.range_m == 1.0 for s in scene.subjects)


def test_zigzag_preset_layout():
    (_, scene), = scenario_preset("zigzag_five")
    assert len(scene.subjects) == 5
    assert max(s.range_m for s in scene.subjects) <= 6.0
    signs = [math.copysign(1, s.azimuth_deg) for s in scene.subjects]
    assert all(a != b for a, b in zip(signs, signs[1:]))
    jitters = sorted(s.posture_jitter_std_m for s in scene.subjects)
    assert jitters[2] < jitters[3]  # three seated (low), two standing (high)


@pytest.mark.parametrize("name", ["elevation_sweep", "tilt_sweep"])
def test_degradation_sweeps_monotone(name):
    scenes = scenario_preset(name)
    snrs = [sc.snr_db for _, sc in scenes]
    jitters = [sc.subjects[0].posture_jitter_std_m for _, sc in scenes]
    assert all(a > b for a, b in zip(snrs, snrs[1:]))
    assert all(a < b for a, b in zip(jitters, jitters[1:]))


def test_scene_file_roundtrip(tmp_path):
    (_, scene), = scenario_preset("zigzag_five", seed=11)
    doc = SceneDocument(sim=scene, obstructions_m=(0.4,) * 5, radar_height_m=2.0)
    path = tmp_path / "scene.txt"
    save_scene(doc, path)
    loaded = load_scene(path)
    assert loaded.sim == scene
    assert loaded.radar_height_m == 2.0
    assert loaded.obstructions_m == (0.4,) * 5


def test_scene_file_rejects_unknown_keys(tmp_path):
    path = tmp_path / "scene.txt"
    path.write_text("subject.0.range_m = 1\nsubject.0.azimuth_deg = 0\n"
                    "subject.0.br_hz = 0.25\nsubject.0.hr_hz = 1.1\nwhat = 3\n")
    with pytest.raises(SceneError, match="unknown"):
        load_scene(path)
