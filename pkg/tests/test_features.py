import numpy as np
import pytest

from vitalradar.errors import ShapeError
from vitalradar.features import (FEATURE_ORDER, FeatureVector, autocorr_estimate,
                                 comb_filter, comb_response, extract_features,
                                 peak_count_estimate, welch_estimate)

FS = 20.0
BR_BAND = (0.05, 0.6)
HR_BAND = (0.8, 2.0)


def tone(freq, n=512, fs=FS, amp=1.0, phase=0.0):
    return amp * np.sin(2 * np.pi * freq * np.arange(n) / fs + phase)


# ---------------------------------------------------------------------------
# comb filter

def test_comb_delay_and_warmup():
    x = tone(0.25)
    y, applied = comb_filter(x, 0.25, FS)
    assert applied
    d = 80
    assert np.allclose(y[:d], x[:d] / 2)
    assert np.allclose(y[d:], (x[d:] - x[:-d]) / 2)


def test_comb_attenuates_second_harmonic():
    x = tone(0.5, n=1024)
    y, _ = comb_filter(x, 0.25, FS)
    steady = slice(160, None)
    atten = np.sqrt(np.mean(y[steady] ** 2) / np.mean(x[steady] ** 2))
    assert 20 * np.log10(atten) <= -20


def test_comb_dc_steady_state_zero():
    y, _ = comb_filter(np.full(400, 2.5), 0.25, FS)
    assert np.allclose(y[80:], 0.0)


def test_comb_analytic_response():
    d = round(FS / 0.25)
    notches = np.arange(5) * FS / d
    resp = comb_response(notches, 0.25, FS)
    assert np.all(20 * np.log10(resp + 1e-300) <= -40)
    mid = (np.arange(4) + 0.5) * FS / d
    assert np.all(20 * np.log10(comb_response(mid, 0.25, FS)) >= -3.0)


def test_comb_bypass_flagged():
    y, applied = comb_filter(np.zeros(32), 0.25, FS)  # D=80 >= len
    assert not applied
    with pytest.raises(ShapeError):
        comb_filter(np.zeros(64), 11.0, FS)


# ---------------------------------------------------------------------------
# Welch estimator

def test_welch_pure_breathing_tone():
    est = welch_estimate(tone(0.25), FS, BR_BAND, l_peaks=1)
    assert est == pytest.approx(0.25, abs=FS / 1024)


def test_welch_duplicate_peaks_collapse():
    est = welch_estimate(tone(1.0), FS, HR_BAND, l_peaks=3)
    assert est == pytest.approx(1.0, abs=FS / 1024)


def test_welch_power_weighted_mean():
    x = np.sqrt(3.0) * tone(1.0) + tone(1.3, phase=0.8)
    est = welch_estimate(x, FS, HR_BAND, l_peaks=3)
    # powers 3:1 -> (3*1.0 + 1*1.3)/4 = 1.075, within one PSD bin
    assert est == pytest.approx(1.075, abs=FS / 1024)


def test_welch_unresolved_on_out_of_band():
    est = welch_estimate(tone(3.0), FS, BR_BAND, l_peaks=1)
    assert est is None or abs(est - 3.0) > 1.0  # nothing breathing-like found


def test_welch_needs_64_samples():
    with pytest.raises(ShapeError):
        welch_estimate(np.zeros(32), FS, BR_BAND)


# ---------------------------------------------------------------------------
# autocorrelation estimator

def test_autocorr_heart_tone():
    est = autocorr_estimate(tone(1.0), FS, HR_BAND)
    assert est == pytest.approx(1.0, abs=0.01)


def test_autocorr_noisy_breathing():
    rng = np.random.default_rng(0)
    x = tone(0.25) + 0.1 * rng.standard_normal(512)
    est = autocorr_estimate(x, FS, (2 * FS / 512, 0.6))
    assert est == pytest.approx(0.25, abs=0.01)


def test_autocorr_white_noise_unresolved():
    # long enough that sample autocorrelations sit well under the 0.1 R(0) cut
    unresolved = 0
    for seed in range(100):
        x = np.random.default_rng(seed).standard_normal(2048)
        if autocorr_estimate(x, FS, HR_BAND) is None:
            unresolved += 1
    assert unresolved >= 95


def test_autocorr_length_precondition():
    with pytest.raises(ShapeError):
        autocorr_estimate(np.zeros(100), FS, (0.05, 0.6))


# ---------------------------------------------------------------------------
# peak counting estimator

def test_peak_count_quarter_hz():
    est = peak_count_estimate(tone(0.25), FS, BR_BAND)
    # 6.4 cycles in 25.6 s -> 6 or 7 peaks
    assert 6 / 25.6 <= est <= 7 / 25.6


def test_peak_count_one_hz():
    est = peak_count_estimate(tone(1.0), FS, HR_BAND)
    assert 25 / 25.6 <= est <= 26 / 25.6


def test_peak_count_constant_unresolved():
    assert peak_count_estimate(np.full(256, 1.0), FS, BR_BAND) is None


def test_estimators_agree_on_pure_tone():
    # all three families land on the tone within their native granularity:
    # one padded PSD bin, one lag step, one cycle over the window
    for freq, band in ((0.25, (2 * FS / 512, 0.6)), (1.25, HR_BAND)):
        x = tone(freq)
        w = welch_estimate(x, FS, band, l_peaks=1)
        a = autocorr_estimate(x, FS, band)
        p = peak_count_estimate(x, FS, band)
        lag = FS / freq
        lag_step = FS / (lag - 1) - FS / lag
        assert abs(w - a) <= FS / 1024 + lag_step
        assert abs(p - freq) <= 1.0 / (512 / FS)
        assert abs(w - freq) <= FS / 1024


# ---------------------------------------------------------------------------
# feature vector assembly

def test_feature_vector_round_trip():
    values = [0.25, 0.26, 0.27, 1.1, 1.2, 1.3, 1.15, 1.25, 1.35]
    fv = FeatureVector(**dict(zip(FEATURE_ORDER, values)), flags=("hr_a",))
    mask = fv.flag_mask
    back = FeatureVector.from_array(fv.as_array(), flag_mask=mask)
    assert np.array_equal(back.as_array(), fv.as_array())
    assert back.flags == ("hr_a",)


def test_feature_vector_rejects_out_of_clamp():
    values = dict(zip(FEATURE_ORDER, [0.25] * 3 + [1.1] * 6))
    values["hr_w"] = 3.0
    with pytest.raises(ShapeError):
        FeatureVector(**values)


def test_extract_features_clean_subject():
    rng = np.random.default_rng(1)
    x_br = tone(0.25, amp=16.0) + 0.05 * rng.standard_normal(512)
    x_hr = tone(1.1, amp=1.0, phase=0.3) + 0.05 * rng.standard_normal(512)
    fv = extract_features(x_br, x_hr, None, FS)
    assert fv.br_w == pytest.approx(0.25, abs=FS / 1024)
    assert fv.br_a == pytest.approx(0.25, abs=0.01)
    assert fv.hr_w == pytest.approx(1.1, abs=0.03)
    assert fv.hr_wc == pytest.approx(1.1, abs=0.05)
    assert fv.flags == ()


def test_extract_features_comb_beats_plain_on_contamination():
    # 2nd/3rd breathing harmonics at heart-band frequencies, stronger than
    # the heartbeat itself; the comb-filtered estimate must not be worse
    wins = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        br = rng.uniform(0.28, 0.45)
        hr = rng.uniform(1.0, 1.9)
        x_br = tone(br, amp=10.0)
        x_hr = (tone(hr, amp=1.0, phase=rng.uniform(0, 6))
                + tone(2 * br, amp=1.5, phase=rng.uniform(0, 6))
                + tone(3 * br, amp=1.5, phase=rng.uniform(0, 6))
                + 0.05 * rng.standard_normal(512))
        fv = extract_features(x_br, x_hr, None, FS)
        if abs(fv.hr_wc - hr) <= abs(fv.hr_w - hr) + 1e-12:
            wins += 1
    assert wins >= 90


def test_extract_features_degenerate_inputs_flagged():
    fv = extract_features(np.zeros(512), np.zeros(512), None, FS)
    assert fv.br_w == pytest.approx(sum(BR_BAND) / 2)
    assert fv.hr_w == pytest.approx(sum(HR_BAND) / 2)
    for name in FEATURE_ORDER:
        assert name in fv.flags
