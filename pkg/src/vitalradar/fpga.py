"""Bit-accurate software model of the hardware vital-sign pipeline.

32-bit fixed-point data path: quantization, a per-stage-scaled radix-2 FFT,
power spectral density + range peak, vectoring-mode CORDIC phase extraction,
a streaming unwrapper, and band-scan HR/BR estimation, with a comparison
harness against the floating-point pipeline.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sp_signal

from .errors import ShapeError
from .radar import RadarConfig, SPEED_OF_LIGHT
from .scene import BR_BAND_HZ, HR_BAND_HZ


@dataclass(frozen=True)
class FixedFormat:
    """Signed two's-complement fixed point: total_bits with frac_bits fraction."""

    total_bits: int = 32
    frac_bits: int = 20

    def __post_init__(self):
        if not 0 < self.frac_bits < self.total_bits:
            raise ShapeError(
                f"frac_bits must be in (0, total_bits), got Q{self.total_bits - self.frac_bits}"
                f".{self.frac_bits}")

    @property
    def scale(self) -> float:
        return float(1 << self.frac_bits)

    @property
    def raw_min(self) -> int:
        return -(1 << (self.total_bits - 1))

    @property
    def raw_max(self) -> int:
        return (1 << (self.total_bits - 1)) - 1

    def __str__(self):
        return f"Q{self.total_bits - self.frac_bits}.{self.frac_bits}"


Q12_20 = FixedFormat(32, 20)


class SaturationCounter:
    """Accumulates how many conversions clipped at the format bounds."""

    def __init__(self):
        self.count = 0

    def add(self, n: int):
        self.count += int(n)


def quantize_array(x, fmt: FixedFormat, counter: SaturationCounter | None = None) -> np.ndarray:
    """Round-to-nearest-even quantization to raw integers, saturating at the bounds."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ShapeError("cannot quantize non-finite values")
    raw = np.rint(x * fmt.scale)
    clipped = np.clip(raw, fmt.raw_min, fmt.raw_max)
    if counter is not None:
        counter.add(np.count_nonzero(raw != clipped))
    return clipped.astype(np.int64)


def dequantize_array(raw, fmt: FixedFormat) -> np.ndarray:
    return np.asarray(raw, dtype=np.float64) / fmt.scale


@dataclass(frozen=True)
class FixedSample:
    """One fixed-point value: raw integer plus its format."""

    raw: int
    fmt: FixedFormat

    @property
    def value(self) -> float:
        return self.raw / self.fmt.scale


def quantize(x: float, fmt: FixedFormat, counter: SaturationCounter | None = None) -> FixedSample:
    return FixedSample(raw=int(quantize_array(x, fmt, counter)), fmt=fmt)


def dequantize(sample: FixedSample) -> float:
    return sample.value


def _rshift_round_even(v: np.ndarray, k: int) -> np.ndarray:
    """Arithmetic right shift by k with round-half-to-even."""
    if k <= 0:
        return v
    q = v >> k
    rem = v - (q << k)
    half = 1 << (k - 1)
    round_up = (rem > half) | ((rem == half) & ((q & 1) == 1))
    return q + round_up


@dataclass
class StageRecord:
    name: str
    multiplies: int
    adds: int
    cycles: int
    max_error_vs_float: float = float("nan")


@dataclass
class PipelineTrace:
    """Per-stage op counts (resource proxy), saturation count, cycle estimate."""

    stages: list = field(default_factory=list)
    saturations: int = 0
    buffers: dict = field(default_factory=dict)

    @property
    def modeled_cycles(self) -> int:
        return sum(s.cycles for s in self.stages)

    def add_stage(self, name, multiplies, adds, cycles, buffer=None):
        self.stages.append(StageRecord(name=name, multiplies=multiplies,
                                       adds=adds, cycles=cycles))
        if buffer is not None:
            self.buffers[name] = buffer


_MODULE_LATENCY_CYCLES = 16  # fixed pipeline fill latency charged per module


# ---------------------------------------------------------------------------
# Radix-2 DIT FFT with per-stage 1/2 scaling

def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def fixed_fft(re_raw: np.ndarray, im_raw: np.ndarray, fmt: FixedFormat,
              counter: SaturationCounter | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Fixed-point FFT of the last axis, scaled by 1/2 per stage (1/N total).

    Twiddle factors are quantized to the same format; products are rounded
    back to fmt after each complex multiply. The per-stage halving keeps the
    butterfly outputs inside full scale, so saturation can only occur on
    pathological inputs (every clip is counted, never silent).
    """
    n = re_raw.shape[-1]
    if n < 2 or n & (n - 1):
        raise ShapeError(f"FFT length must be a power of two >= 2, got {n}")
    stages = n.bit_length() - 1
    rev = _bit_reverse_indices(n)
    re = np.asarray(re_raw, dtype=np.int64)[..., rev].copy()
    im = np.asarray(im_raw, dtype=np.int64)[..., rev].copy()

    angles = -2.0 * np.pi * np.arange(n // 2) / n
    wr_full = quantize_array(np.cos(angles), fmt)
    wi_full = quantize_array(np.sin(angles), fmt)

    def saturate(v):
        # Butterfly outputs can reach ~1.21x full scale on adversarial
        # full-scale complex inputs even with the 1/2 halving; clamp per
        # stage like the hardware adders would, counting every clip.
        clipped = np.clip(v, fmt.raw_min, fmt.raw_max)
        if counter is not None:
            counter.add(np.count_nonzero(clipped != v))
        return clipped

    for s in range(stages):
        half = 1 << s
        step = half * 2
        shape = re.shape[:-1] + (n // step, step)
        re_v = re.reshape(shape)
        im_v = im.reshape(shape)
        ar, ai = re_v[..., :half], im_v[..., :half]
        br, bi = re_v[..., half:], im_v[..., half:]
        tw = np.arange(half) * (n // step)
        wr, wi = wr_full[tw], wi_full[tw]
        tr = _rshift_round_even(br * wr - bi * wi, fmt.frac_bits)
        ti = _rshift_round_even(br * wi + bi * wr, fmt.frac_bits)
        new_ar = saturate(_rshift_round_even(ar + tr, 1))
        new_ai = saturate(_rshift_round_even(ai + ti, 1))
        new_br = saturate(_rshift_round_even(ar - tr, 1))
        new_bi = saturate(_rshift_round_even(ai - ti, 1))
        re_v[..., :half], im_v[..., :half] = new_ar, new_ai
        re_v[..., half:], im_v[..., half:] = new_br, new_bi
    return re, im


def psd(re_raw: np.ndarray, im_raw: np.ndarray, literal_complex_square: bool = False
        ) -> np.ndarray:
    """Power spectral density of a fixed spectrum, in raw^2 integer units.

    Default is Re(X)^2 + Im(X)^2 (a true power). The alternative evaluates
    the literal complex-square reading Re(X^2) + Im(X^2), selectable only for
    comparison; it is not a power quantity and may go negative.
    """
    re = np.asarray(re_raw, dtype=np.int64)
    im = np.asarray(im_raw, dtype=np.int64)
    if literal_complex_square:
        return re * re - im * im + 2 * re * im
    return re * re + im * im


def peak_range(gamma: np.ndarray, config: RadarConfig) -> tuple[int, float] | None:
    """Strongest range bin in [1, N/2) and its range R = (c / 2BW) * T_m * f_b.

    Returns None when the spectrum is all zero ("no target").
    """
    n = len(gamma)
    search = gamma[1:n // 2]
    if not np.any(search > 0):
        return None
    k_hat = 1 + int(np.argmax(search))
    f_b = k_hat * config.adc_rate_sps / n
    r = (SPEED_OF_LIGHT / (2.0 * config.bandwidth_hz)) * config.chirp_duration_s * f_b
    return k_hat, r


# ---------------------------------------------------------------------------
# CORDIC phase extraction (vectoring mode)

_CORDIC_ANGLE_FRAC = 29  # internal angle accumulator resolution
_CORDIC_GUARD_BITS = 8   # extra x/y datapath width so shift truncation stays
                         # below the angle resolution (standard guard bits)


def _cordic_tables(iterations: int):
    scale = 1 << _CORDIC_ANGLE_FRAC
    return np.array([int(round(math.atan(2.0 ** -i) * scale)) for i in range(iterations)],
                    dtype=np.int64)


def cordic_atan2_raw(i_raw: np.ndarray, q_raw: np.ndarray, fmt: FixedFormat,
                     iterations: int = 24) -> np.ndarray:
    """Vectorized vectoring-mode CORDIC atan2 on raw integers; output in fmt.

    Quadrant pre-rotation maps every input to x > 0, the shift-add iteration
    drives y to zero while accumulating the rotation angle at 2^-29 rad
    resolution, and the result is rounded to the I/O format, in (-pi, pi] up
    to that quantization.
    """
    x = np.asarray(i_raw, dtype=np.int64)
    y = np.asarray(q_raw, dtype=np.int64)
    if np.any((x == 0) & (y == 0)):
        raise ShapeError("CORDIC atan2 is undefined at (0, 0)")
    atan_table = _cordic_tables(iterations)
    half_pi = int(round(math.pi / 2 * (1 << _CORDIC_ANGLE_FRAC)))

    # Pre-rotation: x<0 rotates by -+pi/2 into the right half plane; x==0 is
    # already a pure +-pi/2 case expressed as (|y|, 0) after rotation.
    neg_x = x < 0
    y_nonneg = y >= 0
    rot_plus = (neg_x | (x == 0)) & y_nonneg     # rotate by -pi/2, add pi/2
    rot_minus = (neg_x | (x == 0)) & ~y_nonneg   # rotate by +pi/2, subtract pi/2
    x0 = np.where(rot_plus, y, np.where(rot_minus, -y, x))
    y0 = np.where(rot_plus, -x, np.where(rot_minus, x, y))
    z = np.where(rot_plus, half_pi, np.where(rot_minus, -half_pi, 0)).astype(np.int64)

    x_i = x0 << _CORDIC_GUARD_BITS
    y_i = y0 << _CORDIC_GUARD_BITS
    for i in range(iterations):
        pos = y_i >= 0
        x_shift = x_i >> i
        y_shift = y_i >> i
        x_next = np.where(pos, x_i + y_shift, x_i - y_shift)
        y_next = np.where(pos, y_i - x_shift, y_i + x_shift)
        z = np.where(pos, z + atan_table[i], z - atan_table[i])
        x_i, y_i = x_next, y_next

    return _rshift_round_even(z, _CORDIC_ANGLE_FRAC - fmt.frac_bits)


def cordic_atan2(i: FixedSample, q: FixedSample, iterations: int = 24) -> FixedSample:
    """Phase of the vector (i, q) in (-pi, pi], as a fixed-point sample."""
    if i.fmt != q.fmt:
        raise ShapeError("CORDIC inputs must share a format")
    raw = cordic_atan2_raw(np.array([i.raw]), np.array([q.raw]), i.fmt, iterations)
    return FixedSample(raw=int(raw[0]), fmt=i.fmt)


def fixed_phase_stream(re_raw: np.ndarray, im_raw: np.ndarray, fmt: FixedFormat,
                       iterations: int = 24) -> np.ndarray:
    """Per-sample CORDIC phase; zero-magnitude samples hold the previous phase
    (0 when there is none), mirroring the floating-point extractor."""
    re = np.asarray(re_raw, dtype=np.int64)
    im = np.asarray(im_raw, dtype=np.int64)
    zero = (re == 0) & (im == 0)
    safe_re = np.where(zero, 1, re)
    phase = cordic_atan2_raw(safe_re, im, fmt, iterations)
    if zero.any():
        idx = np.where(~zero, np.arange(len(re)), -1)
        idx = np.maximum.accumulate(idx)
        phase = np.where(idx >= 0, phase[np.maximum(idx, 0)], 0)
    return phase


# ---------------------------------------------------------------------------
# Streaming phase unwrapper

class StreamUnwrapper:
    """Accumulator + previous-value register + comparator unwrapping.

    Each incoming sample's difference against the previous input is folded
    into (-pi, pi] by repeated +-2*pi correction, then added to the running
    output. State is exactly (previous input, previous output).
    """

    def __init__(self, fmt: FixedFormat):
        self.fmt = fmt
        self.pi_raw = int(round(math.pi * fmt.scale))
        self.two_pi_raw = int(round(2.0 * math.pi * fmt.scale))
        self.prev_in: int | None = None
        self.prev_out = 0

    def push(self, raw: int) -> int:
        raw = int(raw)
        if self.prev_in is None:
            self.prev_in = raw
            self.prev_out = raw
            return raw
        diff = raw - self.prev_in
        while diff > self.pi_raw:
            diff -= self.two_pi_raw
        while diff <= -self.pi_raw:
            diff += self.two_pi_raw
        self.prev_in = raw
        self.prev_out = self.prev_out + diff
        return self.prev_out


def stream_unwrap(phase_raw: np.ndarray, fmt: FixedFormat) -> np.ndarray:
    """Vectorized equivalent of feeding every sample through StreamUnwrapper."""
    phase = np.asarray(phase_raw, dtype=np.int64)
    if len(phase) == 0:
        return phase.copy()
    pi_raw = int(round(math.pi * fmt.scale))
    two_pi_raw = int(round(2.0 * math.pi * fmt.scale))
    d = np.diff(phase)
    while np.any(d > pi_raw):
        d = np.where(d > pi_raw, d - two_pi_raw, d)
    while np.any(d <= -pi_raw):
        d = np.where(d <= -pi_raw, d + two_pi_raw, d)
    out = np.empty_like(phase)
    out[0] = phase[0]
    out[1:] = phase[0] + np.cumsum(d)
    return out


# ---------------------------------------------------------------------------
# Band-scan HR/BR estimation

def _band_bins(band, fs: float, m: int) -> np.ndarray:
    lo = max(1, math.ceil(band[0] * m / fs))
    hi = min(m // 2 - 1, math.floor(band[1] * m / fs))
    if lo > hi:
        raise ShapeError(
            f"band {band} Hz resolves to no FFT bins at M={m}, fs={fs}; "
            f"need M >= {2 ** math.ceil(math.log2(max(2.0, fs / band[1])))}")
    return np.arange(lo, hi + 1)


def band_scan_estimate(unwrapped_raw: np.ndarray, fs: float, fmt: FixedFormat,
                       counter: SaturationCounter | None = None,
                       br_band=BR_BAND_HZ, hr_band=HR_BAND_HZ) -> tuple[float, float]:
    """(hr_bpm, br_brpm) from the phase spectrum's per-band peak bins.

    The mean-removed unwrapped phase goes through the fixed FFT; within each
    band the PSD argmax bin k maps to 60 * fs * k / M. No FIR/IIR filtering
    is involved, matching the hardware flow.
    """
    phase = np.asarray(unwrapped_raw, dtype=np.int64)
    m = len(phase)
    if m < 2 or m & (m - 1):
        raise ShapeError(f"band scan needs a power-of-two window, got {m}")
    shift = m.bit_length() - 1
    mean = _rshift_round_even(phase.sum(), shift)
    centered = phase - mean
    re, im = fixed_fft(centered, np.zeros_like(centered), fmt, counter)
    gamma = psd(re, im)
    br_bins = _band_bins(br_band, fs, m)
    hr_bins = _band_bins(hr_band, fs, m)
    br_k = br_bins[int(np.argmax(gamma[br_bins]))]
    hr_k = hr_bins[int(np.argmax(gamma[hr_bins]))]
    return 60.0 * fs * hr_k / m, 60.0 * fs * br_k / m


def band_confidence(gamma: np.ndarray, bins: np.ndarray) -> float:
    """Peak-to-median power ratio inside a band (low values = unreliable)."""
    band_vals = gamma[bins].astype(np.float64)
    med = float(np.median(band_vals))
    if med <= 0.0:
        return float("inf") if band_vals.max() > 0 else 0.0
    return float(band_vals.max() / med)


# ---------------------------------------------------------------------------
# Fixed vs float pipeline comparison

_CONFIDENCE_RATIO = 10.0


@dataclass
class PathEstimates:
    br_brpm: float
    hr_bpm: float
    range_bin: int
    low_confidence: bool
    wall_time_s: float


@dataclass
class CompareReport:
    """Cross-validation of the fixed-point path against the float path."""

    float_path: PathEstimates
    fixed_path: PathEstimates
    delta_hr_bpm: float
    delta_br_brpm: float
    stage_errors: dict
    saturations: int
    modeled_cycles: int
    trace: PipelineTrace

    def as_text(self) -> str:
        lines = [
            f"delta_hr_bpm: {self.delta_hr_bpm:.6g}",
            f"delta_br_brpm: {self.delta_br_brpm:.6g}",
            f"saturations: {self.saturations}",
            f"modeled_cycles: {self.modeled_cycles}",
            f"float_br_brpm: {self.float_path.br_brpm:.6g}",
            f"float_hr_bpm: {self.float_path.hr_bpm:.6g}",
            f"fixed_br_brpm: {self.fixed_path.br_brpm:.6g}",
            f"fixed_hr_bpm: {self.fixed_path.hr_bpm:.6g}",
            f"float_range_bin: {self.float_path.range_bin}",
            f"fixed_range_bin: {self.fixed_path.range_bin}",
            f"float_low_confidence: {self.float_path.low_confidence}",
            f"fixed_low_confidence: {self.fixed_path.low_confidence}",
            f"float_wall_time_s: {self.float_path.wall_time_s:.6g}",
            f"fixed_wall_time_s: {self.fixed_path.wall_time_s:.6g}",
        ]
        for name, err in self.stage_errors.items():
            lines.append(f"stage_error_{name}: {err:.6g}")
        return "\n".join(lines) + "\n"


def _float_reference_path(z: np.ndarray, fs: float):
    """Rectangular-window float pipeline mirroring the fixed stages.

    Returns (spectra/N, peak bin, wrapped phase, unwrapped phase, estimates).
    """
    from . import dsp, features

    start = time.perf_counter()
    spectra = np.fft.fft(z, axis=-1) / z.shape[-1]
    mean_power = (np.abs(spectra) ** 2).mean(axis=0)
    n = z.shape[-1]
    k_hat = 1 + int(np.argmax(mean_power[1:n // 2]))
    series = spectra[:, k_hat]
    corrected, _ = dsp.dc_offset_correct(series)
    wrapped, _ = dsp.extract_phase(corrected)
    unwrapped = dsp.unwrap_phase(wrapped).unwrapped
    demeaned = unwrapped - unwrapped.mean()
    br = features.welch_estimate(demeaned, fs, BR_BAND_HZ, l_peaks=1)
    hr = features.welch_estimate(demeaned, fs, HR_BAND_HZ, l_peaks=3)
    low_conf = br is None or hr is None
    if not low_conf:
        nperseg = min(256, len(demeaned) // 2)
        freqs, pxx = sp_signal.welch(demeaned, fs=fs, window="hann", nperseg=nperseg,
                                     noverlap=nperseg // 2, nfft=4 * nperseg)
        for band in (BR_BAND_HZ, HR_BAND_HZ):
            sel = (freqs >= band[0]) & (freqs <= band[1])
            med = np.median(pxx[sel])
            if med <= 0 or pxx[sel].max() / med < _CONFIDENCE_RATIO:
                low_conf = True
    elapsed = time.perf_counter() - start
    est = PathEstimates(
        br_brpm=60.0 * (br if br is not None else (BR_BAND_HZ[0] + BR_BAND_HZ[1]) / 2),
        hr_bpm=60.0 * (hr if hr is not None else (HR_BAND_HZ[0] + HR_BAND_HZ[1]) / 2),
        range_bin=k_hat, low_confidence=low_conf, wall_time_s=elapsed)
    return spectra, k_hat, wrapped, unwrapped, est


def compare_pipelines(cube, fmt: FixedFormat = Q12_20, channel: int = 0,
                      cordic_iterations: int = 24) -> CompareReport:
    """Run the float pipeline and the fixed-point model on one capture.

    Intended for single-subject cubes (the hardware flow tracks one range
    bin). Both paths consume the same channel; the float path uses a
    rectangular window so the per-stage errors isolate quantization effects.
    """
    z = cube.samples[:, channel, :]
    m, n = z.shape
    config = cube.config
    fs = 1.0 / config.chirp_period_s

    float_spectra, float_k, float_wrapped, float_unwrapped, float_est = \
        _float_reference_path(z, fs)

    counter = SaturationCounter()
    trace = PipelineTrace()
    start = time.perf_counter()

    re_raw = quantize_array(z.real, fmt, counter)
    im_raw = quantize_array(z.imag, fmt, counter)
    trace.add_stage("preprocess", multiplies=0, adds=0,
                    cycles=m * n + _MODULE_LATENCY_CYCLES)

    fft_re, fft_im = fixed_fft(re_raw, im_raw, fmt, counter)
    stages = n.bit_length() - 1
    trace.add_stage("range_fft", multiplies=m * 4 * (n // 2) * stages,
                    adds=m * 6 * (n // 2) * stages,
                    cycles=m * (n // 2) * stages + _MODULE_LATENCY_CYCLES)

    gamma_total = psd(fft_re, fft_im).sum(axis=0)
    peak = peak_range(gamma_total, config)
    if peak is None:
        raise ShapeError("fixed pipeline found no target (all-zero spectrum)")
    k_hat, _ = peak
    trace.add_stage("psd_peak", multiplies=m * n, adds=m * n + n,
                    cycles=m * n + _MODULE_LATENCY_CYCLES)

    phase_raw = fixed_phase_stream(fft_re[:, k_hat], fft_im[:, k_hat], fmt,
                                   cordic_iterations)
    trace.add_stage("cordic_phase", multiplies=0, adds=m * 3 * cordic_iterations,
                    cycles=m * cordic_iterations + _MODULE_LATENCY_CYCLES,
                    buffer=phase_raw)

    unwrapped_raw = stream_unwrap(phase_raw, fmt)
    trace.add_stage("unwrap", multiplies=0, adds=2 * m,
                    cycles=m + _MODULE_LATENCY_CYCLES, buffer=unwrapped_raw)

    hr_bpm, br_brpm = band_scan_estimate(unwrapped_raw, fs, fmt, counter)
    m_stages = m.bit_length() - 1
    trace.add_stage("band_scan", multiplies=m * 4 * (m // 2) * m_stages // m,
                    adds=m, cycles=(m // 2) * m_stages + _MODULE_LATENCY_CYCLES)
    trace.saturations = counter.count

    centered = np.asarray(unwrapped_raw) - _rshift_round_even(
        np.asarray(unwrapped_raw).sum(), m.bit_length() - 1)
    pre, pim = fixed_fft(centered, np.zeros_like(centered), fmt)
    gamma_phase = psd(pre, pim)
    fixed_low_conf = (
        band_confidence(gamma_phase, _band_bins(BR_BAND_HZ, fs, m)) < _CONFIDENCE_RATIO or
        band_confidence(gamma_phase, _band_bins(HR_BAND_HZ, fs, m)) < _CONFIDENCE_RATIO)
    fixed_elapsed = time.perf_counter() - start

    fixed_est = PathEstimates(br_brpm=br_brpm, hr_bpm=hr_bpm, range_bin=k_hat,
                              low_confidence=fixed_low_conf, wall_time_s=fixed_elapsed)

    fixed_spec = dequantize_array(fft_re, fmt) + 1j * dequantize_array(fft_im, fmt)
    stage_errors = {
        "fft": float(np.abs(fixed_spec - float_spectra).max()),
        "range_bin": float(abs(k_hat - float_k)),
    }
    if k_hat == float_k:
        fixed_phase = dequantize_array(phase_raw, fmt)
        d = np.abs(fixed_phase - float_wrapped)
        stage_errors["phase"] = float(np.minimum(d, 2.0 * np.pi - d).max())
        fixed_unwrapped = dequantize_array(unwrapped_raw, fmt)
        offset_err = np.abs((fixed_unwrapped - fixed_unwrapped[0]) -
                            (float_unwrapped - float_unwrapped[0]))
        stage_errors["unwrap"] = float(offset_err.max())

    return CompareReport(
        float_path=float_est, fixed_path=fixed_est,
        delta_hr_bpm=abs(fixed_est.hr_bpm - float_est.hr_bpm),
        delta_br_brpm=abs(fixed_est.br_brpm - float_est.br_brpm),
        stage_errors=stage_errors, saturations=counter.count,
        modeled_cycles=trace.modeled_cycles, trace=trace)
