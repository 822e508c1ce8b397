"""Comb filtering, frequency estimators, and the nine-feature HR/BR vector.

Three estimator families (Welch spectrum, autocorrelation, peak counting)
applied to the breathing mode, the heartbeat mode, and the comb-filtered
heartbeat mode yield the feature vector consumed by the regression models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import signal as sp_signal

from .errors import ShapeError
from .scene import BR_BAND_HZ, HR_BAND_HZ

FEATURE_ORDER = ("br_w", "br_a", "br_p", "hr_w", "hr_a", "hr_p", "hr_wc", "hr_ac", "hr_pc")

_BR_CLAMP = (0.0, 0.7)
_HR_CLAMP = (0.0, 2.5)


def comb_filter(x: np.ndarray, f_br_hz: float, fs: float) -> tuple[np.ndarray, bool]:
    """FIR comb y[n] = (x[n] - x[n-D]) / 2 with D = round(fs / f_br_hz).

    Places exact nulls at every integer multiple of fs/D (~ the breathing
    fundamental and all its harmonics) with at most 3 dB loss midway between
    notches. The first D output samples use zero-padded history. Returns
    (filtered, applied); the filter is bypassed (applied=False) when D < 2 or
    D >= len(x).
    """
    if not 0.0 < f_br_hz < fs / 2.0:
        raise ShapeError(f"comb frequency must be in (0, fs/2), got {f_br_hz}")
    x = np.asarray(x, dtype=np.float64)
    d = int(round(fs / f_br_hz))
    if d < 2 or d >= len(x):
        return x.copy(), False
    delayed = np.concatenate([np.zeros(d), x[:-d]])
    return (x - delayed) / 2.0, True


def comb_response(f_hz, f_br_hz: float, fs: float):
    """Analytic magnitude response |1 - exp(-j w D)| / 2 of the comb filter."""
    d = int(round(fs / f_br_hz))
    w = 2.0 * np.pi * np.asarray(f_hz, dtype=np.float64) / fs
    return np.abs(1.0 - np.exp(-1j * w * d)) / 2.0


def welch_estimate(x: np.ndarray, fs: float, band, l_peaks: int = 1) -> float | None:
    """Dominant in-band frequency from a Welch PSD; None if the band is unresolved.

    PSD settings: Hann segments of min(256, len/2) with 50% overlap and 4x
    zero padding. With l_peaks = 1 the highest in-band peak wins; otherwise
    the l_peaks highest peaks are combined by power-weighted mean (fewer
    peaks than requested collapse to the ones found). A band whose local
    maxima never exceed the in-band median PSD is reported unresolved.
    """
    x = np.asarray(x, dtype=np.float64)
    if len(x) < 64:
        raise ShapeError(f"Welch estimate needs >= 64 samples, got {len(x)}")
    nperseg = min(256, len(x) // 2)
    freqs, psd = sp_signal.welch(
        x, fs=fs, window="hann", nperseg=nperseg, noverlap=nperseg // 2,
        nfft=4 * nperseg, detrend="constant")

    in_band = (freqs >= band[0]) & (freqs <= band[1])
    if not in_band.any():
        return None
    # Local maxima judged on the full PSD, then restricted to the band.
    interior = np.zeros_like(in_band)
    interior[1:-1] = (psd[1:-1] >= psd[:-2]) & (psd[1:-1] >= psd[2:])
    peaks = np.flatnonzero(in_band & interior)
    floor = np.median(psd[in_band])
    peaks = peaks[psd[peaks] > floor]
    if len(peaks) == 0:
        return None
    top = peaks[np.argsort(psd[peaks])[::-1][:l_peaks]]
    weights = psd[top]
    df = freqs[1] - freqs[0]
    refined = np.array([_parabolic_peak_hz(psd, i, df) for i in top])
    return float(refined @ weights / weights.sum())


def _parabolic_peak_hz(psd: np.ndarray, i: int, df: float) -> float:
    """Sub-bin peak frequency via log-parabola through the peak's neighbors."""
    if not 0 < i < len(psd) - 1:
        return i * df
    with np.errstate(divide="ignore"):
        left, mid, right = np.log(psd[i - 1:i + 2] + 1e-300)
    denom = left - 2.0 * mid + right
    if denom >= 0.0 or not np.isfinite(denom):
        return i * df
    shift = 0.5 * (left - right) / denom
    return (i + min(max(shift, -0.5), 0.5)) * df


def autocorr_estimate(x: np.ndarray, fs: float, band) -> float | None:
    """Fundamental frequency from the unbiased autocorrelation peak lag.

    Searches lags [fs/band_high, fs/band_low]. A periodic signal peaks
    equally at every multiple of its period, so among in-range local maxima
    within 10% of the best one the smallest lag wins (the fundamental);
    3-point parabolic interpolation refines it. Unresolved (None) when the
    best in-range autocorrelation falls below 0.1 * R(0).
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    min_needed = 2.0 * fs / band[0]
    if n < min_needed:
        raise ShapeError(
            f"autocorrelation over band {band} needs >= {min_needed:.0f} samples, got {n}")
    xc = x - x.mean()
    r = np.correlate(xc, xc, mode="full")[n - 1:]
    r = r / (n - np.arange(n))
    if r[0] <= 0.0:
        return None
    lag_lo = max(1, math.ceil(fs / band[1]))
    lag_hi = min(n - 1, math.floor(fs / band[0]))
    if lag_lo > lag_hi:
        return None
    window = r[lag_lo:lag_hi + 1]
    peak_val = window.max()
    if peak_val < 0.1 * r[0]:
        return None
    lags = np.arange(lag_lo, lag_hi + 1)
    is_max = (r[lags] >= r[lags - 1]) & (r[lags] >= r[np.minimum(lags + 1, n - 1)])
    candidates = lags[is_max & (window >= 0.9 * peak_val)]
    best = int(candidates[0]) if len(candidates) else lag_lo + int(np.argmax(window))
    lag = float(best)
    if 1 <= best < n - 1:
        left, mid, right = r[best - 1], r[best], r[best + 1]
        denom = left - 2.0 * mid + right
        if denom < 0.0:
            lag = best + 0.5 * (left - right) / denom
    return float(fs / lag)


def peak_count_estimate(x: np.ndarray, fs: float, band,
                        duration_s: float | None = None) -> float | None:
    """Cycle rate as (number of prominent peaks) / observation time.

    Peaks need prominence >= 0.3 * std(x) and spacing >= fs/band_high
    samples. None when no peak qualifies (constant or empty signals).
    """
    x = np.asarray(x, dtype=np.float64)
    duration = len(x) / fs if duration_s is None else duration_s
    std = x.std()
    if std == 0.0:
        return None
    peaks, _ = sp_signal.find_peaks(
        x, prominence=0.3 * std, distance=max(1, int(math.floor(fs / band[1]))))
    if len(peaks) == 0:
        return None
    return float(len(peaks) / duration)


@dataclass(frozen=True)
class FeatureVector:
    """The nine frequency estimates, in Hz (BRPM/BPM conversion happens at
    reporting only). ``flags`` names features that fell back to their band
    midpoint, were clamped, or came from an unresolved VMD band."""

    br_w: float
    br_a: float
    br_p: float
    hr_w: float
    hr_a: float
    hr_p: float
    hr_wc: float
    hr_ac: float
    hr_pc: float
    flags: tuple = ()

    def __post_init__(self):
        for name in FEATURE_ORDER:
            value = getattr(self, name)
            lo, hi = _BR_CLAMP if name.startswith("br") else _HR_CLAMP
            if not math.isfinite(value) or not lo <= value <= hi:
                raise ShapeError(f"feature {name} = {value!r} outside clamp range [{lo}, {hi}]")
        object.__setattr__(self, "flags", tuple(self.flags))

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in FEATURE_ORDER])

    @property
    def flag_mask(self) -> int:
        return sum(1 << i for i, name in enumerate(FEATURE_ORDER) if name in self.flags)

    @classmethod
    def from_array(cls, values, flag_mask: int = 0) -> "FeatureVector":
        flags = tuple(name for i, name in enumerate(FEATURE_ORDER) if flag_mask & (1 << i))
        return cls(**dict(zip(FEATURE_ORDER, map(float, values))), flags=flags)


def _finalize(name: str, value: float | None, band, flags: list) -> float:
    """Band-midpoint fallback for unresolved estimates, clamped otherwise."""
    lo, hi = _BR_CLAMP if name.startswith("br") else _HR_CLAMP
    if value is None:
        flags.append(name)
        return (band[0] + band[1]) / 2.0
    clamped = min(max(value, lo), hi)
    if clamped != value:
        flags.append(name)
    return clamped


def extract_features(x_br: np.ndarray, x_hr: np.ndarray, f_br_hint: float | None,
                     fs: float, br_band=BR_BAND_HZ, hr_band=HR_BAND_HZ,
                     extra_flags=()) -> FeatureVector:
    """All nine HR/BR frequency features from the decomposed modes.

    The comb-filtered variants use f_br_hint (falling back to the internally
    computed br_w, then to the band midpoint) as the notch fundamental.
    Unresolved estimators fall back to their band midpoint and are flagged,
    keeping the feature vector's dimensionality fixed at nine.

    The autocorrelation search band is clipped so its slowest period fits
    twice in the window (len/2 lags), which the full breathing band may not
    at short window lengths.
    """
    flags: list = list(extra_flags)
    n = len(x_br)

    def acorr(x, band):
        # periods that do not fit twice in the window are unreachable; an
        # entirely unreachable band is simply unresolved
        lo = max(band[0], 2.0 * fs / n)
        if lo >= band[1]:
            return None
        return autocorr_estimate(x, fs, (lo, band[1]))

    br_w = welch_estimate(x_br, fs, br_band, l_peaks=1)
    br_a = acorr(x_br, br_band)
    br_p = peak_count_estimate(x_br, fs, br_band)
    hr_w = welch_estimate(x_hr, fs, hr_band, l_peaks=3)
    hr_a = acorr(x_hr, hr_band)
    hr_p = peak_count_estimate(x_hr, fs, hr_band)

    comb_freq = f_br_hint if f_br_hint is not None else br_w
    if comb_freq is None or not 0.0 < comb_freq < fs / 2.0:
        comb_freq = (br_band[0] + br_band[1]) / 2.0
    x_hr_c, applied = comb_filter(x_hr, comb_freq, fs)
    if not applied:
        flags.append("comb_bypassed")
    hr_wc = welch_estimate(x_hr_c, fs, hr_band, l_peaks=3)
    hr_ac = acorr(x_hr_c, hr_band)
    hr_pc = peak_count_estimate(x_hr_c, fs, hr_band)

    values = {
        "br_w": _finalize("br_w", br_w, br_band, flags),
        "br_a": _finalize("br_a", br_a, br_band, flags),
        "br_p": _finalize("br_p", br_p, br_band, flags),
        "hr_w": _finalize("hr_w", hr_w, hr_band, flags),
        "hr_a": _finalize("hr_a", hr_a, hr_band, flags),
        "hr_p": _finalize("hr_p", hr_p, hr_band, flags),
        "hr_wc": _finalize("hr_wc", hr_wc, hr_band, flags),
        "hr_ac": _finalize("hr_ac", hr_ac, hr_band, flags),
        "hr_pc": _finalize("hr_pc", hr_pc, hr_band, flags),
    }
    return FeatureVector(**values, flags=tuple(flags))
