"""Binary capture files: raw interleaved int16 I/Q plus the radar config.

Layout (little-endian):
  magic    8 bytes  b"FMCWVIT1"
  version  u16      1
  config   10 x 64-bit fields, in order:
             f_min_hz f64, f_max_hz f64, t_m_s f64, t_c_s f64,
             num_chirps u64, adc_samples u64, adc_rate_sps f64,
             n_tx u64, n_rx u64, bandwidth_hz f64 (redundant, validated)
  payload  M*J*N complex samples as int16 pairs, I before Q, ordered
           chirp-major, then channel, then fast time; +-32767 <-> +-1.0
"""

from __future__ import annotations

import struct
import warnings

import numpy as np

from .errors import CaptureError, ConfigError
from .radar import RadarConfig
from .scene import DataCube

CAPTURE_MAGIC = b"FMCWVIT1"
CAPTURE_VERSION = 1
_HEADER = struct.Struct("<8sHddddQQdQQd")
FULL_SCALE = 32767.0
_MAX_PAYLOAD_BYTES = 1 << 40


def write_capture(cube: DataCube, path) -> int:
    """Write a cube; returns how many components clipped at full scale.

    Values outside [-1, 1] saturate at +-32767 (counted and warned); keep
    simulated amplitudes inside full scale for lossless-to-quantization
    round trips.
    """
    config = cube.config
    header = _HEADER.pack(
        CAPTURE_MAGIC, CAPTURE_VERSION,
        config.f_min_hz, config.f_max_hz,
        config.chirp_duration_s, config.chirp_period_s,
        config.num_chirps, config.adc_samples, config.adc_rate_sps,
        config.n_tx, config.n_rx, config.bandwidth_hz)
    interleaved = np.empty(cube.samples.shape + (2,), dtype=np.float64)
    interleaved[..., 0] = cube.samples.real
    interleaved[..., 1] = cube.samples.imag
    raw = np.rint(interleaved * FULL_SCALE)
    clipped = np.clip(raw, -FULL_SCALE, FULL_SCALE)
    n_clipped = int(np.count_nonzero(raw != clipped))
    if n_clipped:
        warnings.warn(f"{n_clipped} sample components exceeded full scale and were clipped")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(clipped.astype("<i2").tobytes())
    return n_clipped


def read_capture(path) -> DataCube:
    """Read a capture, validating the header before touching the payload."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise CaptureError(
            f"file too short for header: expected >= {_HEADER.size} bytes, got {len(data)}")
    (magic, version, f_min, f_max, t_m, t_c, num_chirps, adc_samples,
     adc_rate, n_tx, n_rx, bandwidth) = _HEADER.unpack_from(data, 0)
    if magic != CAPTURE_MAGIC:
        raise CaptureError(f"bad magic at byte 0: expected {CAPTURE_MAGIC!r}, got {magic!r}")
    if version != CAPTURE_VERSION:
        raise CaptureError(f"unsupported capture version {version} at byte 8")
    try:
        config = RadarConfig.from_primitives(
            f_min_hz=f_min, f_max_hz=f_max, t_m_s=t_m, t_c_s=t_c,
            num_chirps=int(num_chirps), adc_samples=int(adc_samples),
            adc_rate_sps=adc_rate, n_tx=int(n_tx), n_rx=int(n_rx))
    except ConfigError as exc:
        raise CaptureError(f"invalid radar config in header at byte 10: {exc}") from exc
    if abs(config.bandwidth_hz - bandwidth) > 1e-6 * config.bandwidth_hz:
        raise CaptureError(
            f"header bandwidth field {bandwidth} at byte 82 disagrees with "
            f"f_max - f_min = {config.bandwidth_hz}")

    j = config.n_tx * config.n_rx
    n_values = config.num_chirps * j * config.adc_samples * 2
    expected = n_values * 2
    if expected > _MAX_PAYLOAD_BYTES:
        raise CaptureError(
            f"header at byte 10 implies an implausible {expected}-byte payload")
    actual = len(data) - _HEADER.size
    if actual != expected:
        raise CaptureError(
            f"payload length mismatch at byte {_HEADER.size}: expected {expected} bytes "
            f"(M*J*N*2*2 = {config.num_chirps}*{j}*{config.adc_samples}*2*2), got {actual}")

    raw = np.frombuffer(data, dtype="<i2", count=n_values, offset=_HEADER.size)
    raw = raw.reshape(config.num_chirps, j, config.adc_samples, 2).astype(np.float64)
    samples = (raw[..., 0] + 1j * raw[..., 1]) / FULL_SCALE
    return DataCube(samples=samples, config=config)
