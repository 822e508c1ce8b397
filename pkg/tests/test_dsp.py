import numpy as np
import pytest

from conftest import small_config
from vitalradar.dsp import (AzimuthGrid, Detection, RangeAzimuthMap,
                            RangeAzimuthSeries, beamform, dc_offset_correct,
                            di_variance_map, extract_phase, fast_time_spectrum,
                            localize, range_fft, unwrap_phase,
                            validate_detections)
from vitalradar.errors import ShapeError
from vitalradar.radar import derive_params
from vitalradar.scene import ClutterSpec, SimScene, SubjectSpec, synthesize

TWO_PI = 2 * np.pi


def breathing_subject(range_m=1.0, azimuth_deg=0.0, **kw):
    base = dict(br_hz=0.25, hr_hz=1.1, breath_amplitude_m=5e-3,
                heart_amplitude_m=2e-4)
    base.update(kw)
    return SubjectSpec(range_m=range_m, azimuth_deg=azimuth_deg, **base)


# ---------------------------------------------------------------------------
# beamforming

def test_beamform_single_channel_identity():
    cfg = small_config(num_chirps=8, adc_samples=32)
    cube = synthesize(SimScene(subjects=(breathing_subject(),), seed=0), cfg)
    grid = AzimuthGrid.default(1)
    out = beamform(cube, grid)
    for k in range(out.shape[0]):
        assert np.allclose(out[k], cube.samples[:, 0, :])


@pytest.mark.parametrize("azimuth", [0.0, 30.0, -24.0])
def test_beamform_peaks_at_target_azimuth(azimuth):
    cfg = small_config(num_chirps=4, adc_samples=64, n_tx=2, n_rx=4)
    cube = synthesize(SimScene(subjects=(breathing_subject(azimuth_deg=azimuth),),
                               seed=0), cfg)
    grid = AzimuthGrid.default(8)
    out = beamform(cube, grid)
    power = (np.abs(out) ** 2).sum(axis=(1, 2))
    best = grid.angles_deg[np.argmax(power)]
    assert abs(best - azimuth) <= 2.0


def test_beamform_dimension_mismatch():
    cfg = small_config(num_chirps=8, adc_samples=32, n_tx=2, n_rx=2)
    cube = synthesize(SimScene(subjects=(breathing_subject(),), seed=0), cfg)
    with pytest.raises(ShapeError, match="channels"):
        beamform(cube, AzimuthGrid.default(8))


# ---------------------------------------------------------------------------
# range FFT

def test_range_fft_peak_bin_17(table1):
    cfg = small_config(num_chirps=4, adc_samples=512)
    cube = synthesize(SimScene(subjects=(breathing_subject(),), seed=0), cfg)
    series = range_fft(beamform(cube, AzimuthGrid.default(1)))
    profile = np.abs(series.values[0, :, 0])
    assert np.argmax(profile) == 17


def test_range_fft_zero_input():
    out = fast_time_spectrum(np.zeros((2, 3, 64)), "hann")
    assert np.all(out == 0)


def test_range_fft_requires_power_of_two():
    with pytest.raises(ShapeError, match="power of two"):
        fast_time_spectrum(np.zeros((1, 1, 48)), "hann")


def test_range_fft_two_targets_energy_order():
    cfg = small_config(num_chirps=4, adc_samples=512)
    cube = synthesize(SimScene(
        subjects=(breathing_subject(1.0), breathing_subject(3.0, br_hz=0.3)),
        seed=0), cfg)
    profile = np.abs(range_fft(beamform(cube, AzimuthGrid.default(1))).values[0, :, 0])
    near, far = profile[17], profile[51]
    assert near > 10 * profile.mean()
    assert far > 10 * profile.mean()
    assert far < near


def test_parseval_rectangular(rng):
    x = rng.standard_normal((3, 4, 128)) + 1j * rng.standard_normal((3, 4, 128))
    spectrum = fast_time_spectrum(x, "rectangular")
    time_energy = np.sum(np.abs(x) ** 2)
    freq_energy = np.sum(np.abs(spectrum) ** 2) / 128
    assert freq_energy == pytest.approx(time_energy, rel=1e-9)


def test_beamform_range_fft_linear(rng):
    cfg = small_config(num_chirps=8, adc_samples=64, n_tx=2, n_rx=2)
    a = rng.standard_normal((8, 4, 64)) + 1j * rng.standard_normal((8, 4, 64))
    b = rng.standard_normal((8, 4, 64)) + 1j * rng.standard_normal((8, 4, 64))
    from vitalradar.scene import DataCube
    grid = AzimuthGrid.default(4)

    def chain(x):
        return range_fft(beamform(DataCube(samples=x, config=cfg), grid)).values

    lhs = chain(a + b)
    rhs = chain(a) + chain(b)
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


# ---------------------------------------------------------------------------
# DC offset correction

def arc(center, radius, span_deg, n, noise=0.0, seed=0):
    rng = np.random.default_rng(seed)
    theta = np.linspace(0, np.radians(span_deg), n)
    pts = center + radius * np.exp(1j * theta)
    if noise:
        pts = pts + noise * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    return pts


def test_dc_correct_recovers_center_noiseless():
    series = arc(0.5 + 0.3j, 1.0, 90.0, 200)
    corrected, fit = dc_offset_correct(series)
    assert abs(fit.center - (0.5 + 0.3j)) < 1e-6
    assert fit.converged and not fit.degenerate
    assert np.allclose(corrected, series - fit.center)


def test_dc_correct_already_centered():
    series = arc(0.0, 2.0, 350.0, 256)
    corrected, fit = dc_offset_correct(series)
    assert abs(fit.center) <= 1e-9
    assert np.abs(corrected - series).max() <= 1e-8


def test_dc_correct_noisy_monte_carlo():
    errors = []
    for seed in range(100):
        series = arc(0.4 - 0.2j, 1.0, 120.0, 256, noise=0.01, seed=seed)
        _, fit = dc_offset_correct(series)
        errors.append(abs(fit.center - (0.4 - 0.2j)))
    assert np.quantile(errors, 0.95) <= 0.02


def test_dc_correct_degenerate_point():
    series = np.full(32, 0.7 + 0.2j)
    corrected, fit = dc_offset_correct(series)
    assert fit.degenerate
    assert np.abs(corrected).max() <= 1e-12  # mean-subtracted


def test_dc_correct_idempotent():
    series = arc(1.0 + 1.0j, 0.8, 200.0, 128, noise=0.005)
    once, fit1 = dc_offset_correct(series)
    twice, fit2 = dc_offset_correct(once)
    assert abs(fit2.center) <= 1e-9


# ---------------------------------------------------------------------------
# phase extraction / unwrapping

def test_extract_phase_constant():
    phase, held = extract_phase(np.exp(1j * 0.3) * np.ones(16))
    assert np.allclose(phase, 0.3)
    assert not held.any()


def test_extract_phase_negative_real_is_pi():
    phase, _ = extract_phase(np.array([-1.0 + 0.0j, -2.0 + 0.0j]))
    assert np.all(phase == np.pi)


def test_extract_phase_zero_hold():
    series = np.array([1.0 + 1.0j, 0.0 + 0.0j, 1.0j, 0j])
    phase, held = extract_phase(series)
    assert phase[1] == phase[0]
    assert phase[3] == phase[2] == np.pi / 2
    assert list(held) == [False, True, False, True]


def test_unwrap_single_correction():
    out = unwrap_phase(np.array([0.0, np.pi - 0.1, -np.pi + 0.1])).unwrapped
    assert out == pytest.approx([0.0, np.pi - 0.1, np.pi + 0.1])


def test_unwrap_identity_when_smooth(rng):
    x = np.cumsum(rng.uniform(-3.0, 3.0, 64))  # steps < pi
    # a series whose consecutive differences stay inside (-pi, pi] passes
    # through unchanged, regardless of its absolute values
    assert np.array_equal(unwrap_phase(x).unwrapped, x)
    # wrapping then unwrapping recovers it up to one global 2*pi multiple
    wrapped = np.mod(x, TWO_PI)
    wrapped[wrapped > np.pi] -= TWO_PI
    rec = unwrap_phase(wrapped).unwrapped
    offsets = (rec - x) / TWO_PI
    assert np.allclose(offsets, np.round(offsets[0]), atol=1e-9)


def brute_force_unwrap(wrapped):
    """Oracle: per sample, add the integer multiple of 2*pi that minimizes the
    jump from the previous output."""
    out = np.empty_like(wrapped)
    out[0] = wrapped[0]
    k = 0
    for m in range(1, len(wrapped)):
        best = None
        for cand in range(k - 3, k + 4):
            val = wrapped[m] + TWO_PI * cand
            if best is None or abs(val - out[m - 1]) < abs(best[1] - out[m - 1]):
                best = (cand, val)
        k = best[0]
        out[m] = best[1]
    return out


def test_unwrap_matches_brute_force_oracle(rng):
    for _ in range(200):
        true = np.cumsum(rng.uniform(-np.pi * 0.999, np.pi * 0.999, 40))
        wrapped = np.mod(true, TWO_PI)
        wrapped[wrapped > np.pi] -= TWO_PI
        ours = unwrap_phase(wrapped).unwrapped
        oracle = brute_force_unwrap(wrapped)
        assert np.array_equal(ours, oracle)


# ---------------------------------------------------------------------------
# DI variance map + localization

def make_map(subjects, snr_db=None, seed=0, num_chirps=128, adc_samples=256,
             clutter=()):
    cfg = small_config(num_chirps=num_chirps, adc_samples=adc_samples,
                       n_tx=2, n_rx=4)
    scene = SimScene(subjects=subjects, clutter=ClutterSpec(tuple(clutter)),
                     snr_db=snr_db, seed=seed)
    cube = synthesize(scene, cfg)
    derived = derive_params(cfg)
    grid = AzimuthGrid.default(8)
    series = range_fft(beamform(cube, grid))
    return di_variance_map(series, derived.range_bin_m), grid, derived, cfg, series


def detect(ra_map, series, rel_threshold=0.25):
    cands = localize(ra_map, rel_threshold, 8, azimuth_guard_bins=4)
    return validate_detections(series, cands)


def true_bins(subject, cfg, grid):
    from vitalradar.radar import SPEED_OF_LIGHT
    f_b = 2 * cfg.chirp_slope_hz_per_s * subject.range_m / SPEED_OF_LIGHT
    r = round(f_b * cfg.adc_samples / cfg.adc_rate_sps)
    k = int(np.argmin(np.abs(grid.angles_deg - subject.azimuth_deg)))
    return r, k


def test_map_empty_scene_low():
    ra_map, _, _, _, series = make_map((), snr_db=20.0)
    # every relative-threshold candidate on a subject-free capture must fail
    # the coherence validation
    assert detect(ra_map, series) == []


def test_map_two_subjects_detected():
    subjects = (breathing_subject(1.0, -16.0),
                breathing_subject(2.0, 16.0, br_hz=0.3, hr_hz=1.4))
    ra_map, grid, derived, cfg, series = make_map(subjects)
    dets = detect(ra_map, series)
    assert len(dets) == 2
    for s in subjects:
        r, k = true_bins(s, cfg, grid)
        assert any(abs(d.range_bin - r) <= 1 and abs(d.azimuth_bin - k) <= 1
                   for d in dets)


def test_map_static_clutter_suppressed():
    subjects = (breathing_subject(1.0, 0.0),)
    # strong reflector 10x the subject's reflectivity
    ra_map, grid, derived, cfg, series = make_map(subjects, clutter=((2.0, -30.0, 10.0),))
    dets = detect(ra_map, series)
    assert len(dets) == 1
    r, k = true_bins(subjects[0], cfg, grid)
    assert abs(dets[0].range_bin - r) <= 1 and abs(dets[0].azimuth_bin - k) <= 1


def test_localize_singleton_and_threshold_validation():
    v = np.zeros((5, 6))
    v[2, 3] = 1.0
    dets = localize(RangeAzimuthMap(di_variance=v))
    assert dets == [Detection(range_bin=3, azimuth_bin=2, value=1.0)]
    with pytest.raises(ShapeError):
        localize(RangeAzimuthMap(di_variance=v), rel_threshold=0.0)


def test_localize_adjacent_peaks_suppressed():
    v = np.zeros((5, 8))
    v[2, 3] = 1.0
    v[2, 4] = 0.8  # adjacent range bin, same azimuth
    dets = localize(RangeAzimuthMap(di_variance=v))
    assert len(dets) == 1
    assert dets[0].range_bin == 3


def test_localize_permutation_invariant():
    subjects = (breathing_subject(1.0, -16.0),
                breathing_subject(2.0, 16.0, br_hz=0.3, hr_hz=1.4))
    map_a, *_, series_a = make_map(subjects)
    map_b, *_, series_b = make_map(subjects[::-1])
    det_a = detect(map_a, series_a)
    det_b = detect(map_b, series_b)
    assert sorted((d.range_bin, d.azimuth_bin) for d in det_a) == \
        sorted((d.range_bin, d.azimuth_bin) for d in det_b)


def test_map_requires_enough_chirps():
    with pytest.raises(ShapeError, match="16"):
        di_variance_map(RangeAzimuthSeries(values=np.zeros((2, 3, 8), dtype=complex)))
