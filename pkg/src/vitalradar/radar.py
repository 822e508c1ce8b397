"""Radar configuration, derived hardware limits, and multi-subject line-of-sight planning."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ConfigError, GeometryError

SPEED_OF_LIGHT = 299_792_458.0  # m/s

# Exact key set of the flat key=value radar config file. Bandwidth and chirp
# slope are always derived, never read.
CONFIG_FILE_KEYS = (
    "f_min_hz",
    "f_max_hz",
    "t_m_s",
    "t_c_s",
    "num_chirps",
    "adc_samples",
    "adc_rate_sps",
    "n_tx",
    "n_rx",
)


@dataclass(frozen=True)
class RadarConfig:
    """Chirp and sampling parameters of the FMCW front end.

    ``bandwidth_hz`` and ``chirp_slope_hz_per_s`` are stored for convenience
    but must be consistent with the primitive fields; use
    :meth:`from_primitives` to build a config from the nine primitive values.
    """

    f_min_hz: float
    f_max_hz: float
    bandwidth_hz: float
    chirp_duration_s: float   # T_m, active sweep time
    chirp_period_s: float     # T_c, chirp repetition interval
    chirp_slope_hz_per_s: float
    num_chirps: int           # M, slow-time window length
    adc_samples: int          # N, fast-time samples per chirp
    adc_rate_sps: float       # f_adc
    n_tx: int
    n_rx: int

    def __post_init__(self):
        for name in ("f_min_hz", "f_max_hz", "bandwidth_hz", "chirp_duration_s",
                     "chirp_period_s", "chirp_slope_hz_per_s", "adc_rate_sps"):
            value = getattr(self, name)
            if not math.isfinite(value) or value <= 0:
                raise ConfigError(f"{name} must be a positive finite number, got {value!r}")
        for name in ("num_chirps", "adc_samples", "n_tx", "n_rx"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {value!r}")
        bw = self.f_max_hz - self.f_min_hz
        if abs(self.bandwidth_hz - bw) > 1e-9 * max(abs(bw), 1.0):
            raise ConfigError(
                f"bandwidth_hz {self.bandwidth_hz!r} inconsistent with f_max_hz - f_min_hz = {bw!r}")
        slope = self.bandwidth_hz / self.chirp_duration_s
        if abs(self.chirp_slope_hz_per_s - slope) > 1e-9 * abs(slope):
            raise ConfigError(
                f"chirp_slope_hz_per_s {self.chirp_slope_hz_per_s!r} inconsistent with "
                f"bandwidth_hz / chirp_duration_s = {slope!r}")
        if not self.chirp_duration_s < self.chirp_period_s:
            raise ConfigError(
                f"chirp_duration_s must be < chirp_period_s "
                f"({self.chirp_duration_s!r} >= {self.chirp_period_s!r})")

    @classmethod
    def from_primitives(cls, f_min_hz, f_max_hz, t_m_s, t_c_s, num_chirps,
                        adc_samples, adc_rate_sps, n_tx, n_rx) -> "RadarConfig":
        """Build a config from the nine primitive fields, deriving BW and slope."""
        if not (math.isfinite(f_max_hz) and math.isfinite(f_min_hz) and f_max_hz > f_min_hz):
            raise ConfigError(f"f_max_hz must exceed f_min_hz, got {f_min_hz!r}..{f_max_hz!r}")
        if not (math.isfinite(t_m_s) and t_m_s > 0):
            raise ConfigError(f"t_m_s must be a positive finite number, got {t_m_s!r}")
        bw = f_max_hz - f_min_hz
        return cls(
            f_min_hz=f_min_hz,
            f_max_hz=f_max_hz,
            bandwidth_hz=bw,
            chirp_duration_s=t_m_s,
            chirp_period_s=t_c_s,
            chirp_slope_hz_per_s=bw / t_m_s,
            num_chirps=int(num_chirps),
            adc_samples=int(adc_samples),
            adc_rate_sps=adc_rate_sps,
            n_tx=int(n_tx),
            n_rx=int(n_rx),
        )

    @classmethod
    def iwr1642_default(cls) -> "RadarConfig":
        """77 GHz 2TX/4RX evaluation-board profile: 2.9982 GHz sweep over 100 us,
        50 ms chirp period, 512 chirps x 512 samples at 6 Msps."""
        return cls.from_primitives(
            f_min_hz=77.0e9,
            f_max_hz=77.0e9 + 2.9982e9,
            t_m_s=100e-6,
            t_c_s=50e-3,
            num_chirps=512,
            adc_samples=512,
            adc_rate_sps=6.0e6,
            n_tx=2,
            n_rx=4,
        )


@dataclass(frozen=True)
class DerivedParams:
    """Hardware limits computed from a :class:`RadarConfig`."""

    lambda_max_m: float           # carrier wavelength at the sweep start
    r_max_m: float                # unconstrained maximum range, c*T_m/2
    r_max_constrained_m: float    # Nyquist-limited maximum range
    range_resolution_m: float
    virtual_channels: int         # J = n_tx * n_rx
    angle_resolution_deg: float
    slow_time_rate_hz: float      # 1 / T_c
    freq_resolution_hz: float     # 1 / (M * T_c)
    range_bin_hz: float           # IF frequency per range bin, f_adc / N
    range_bin_m: float            # meters per range bin


def derive_params(config: RadarConfig) -> DerivedParams:
    """Compute wavelength, range limits, and resolution figures for a config.

    The constrained maximum range caps the sweep-time limit by the Nyquist
    fraction f_adc / (2*BW); once the ADC outruns the sweep bandwidth the
    unconstrained limit applies.
    """
    c = SPEED_OF_LIGHT
    lambda_max = c / config.f_min_hz
    r_max = c * config.chirp_duration_s / 2.0
    r_max_constrained = min(r_max, r_max * config.adc_rate_sps / (2.0 * config.bandwidth_hz))
    n_bins = config.adc_samples / 2.0
    range_resolution = r_max_constrained / n_bins
    j = config.n_tx * config.n_rx
    return DerivedParams(
        lambda_max_m=lambda_max,
        r_max_m=r_max,
        r_max_constrained_m=r_max_constrained,
        range_resolution_m=range_resolution,
        virtual_channels=j,
        angle_resolution_deg=angle_resolution(config.n_tx, config.n_rx),
        slow_time_rate_hz=1.0 / config.chirp_period_s,
        freq_resolution_hz=1.0 / (config.num_chirps * config.chirp_period_s),
        range_bin_hz=config.adc_rate_sps / config.adc_samples,
        range_bin_m=range_resolution,
    )


def angle_resolution(n_tx: int, n_rx: int) -> float:
    """Azimuth resolution in degrees of a half-wavelength virtual ULA.

    Uses the standard 2/J-radian beamwidth approximation for J = n_tx*n_rx
    virtual elements, rounded to 0.1 deg.
    """
    if n_tx < 1 or n_rx < 1:
        raise ConfigError(f"antenna counts must be >= 1, got n_tx={n_tx}, n_rx={n_rx}")
    j = n_tx * n_rx
    return round(math.degrees(2.0 / j), 1)


@dataclass(frozen=True)
class GeometryScene:
    """Ordered line of subjects for radar-elevation planning.

    ``subjects`` holds (range_m, obstruction_height_m) pairs sorted by
    increasing range; the obstruction height is the vertical extent of the
    subject above the common chest-level plane.
    """

    subjects: tuple  # of (range_m, obstruction_height_m)
    radar_height_m: float = 0.0
    radar_tilt_deg: float = 0.0

    def __post_init__(self):
        subjects = tuple((float(r), float(l)) for r, l in self.subjects)
        object.__setattr__(self, "subjects", subjects)
        if not subjects:
            raise GeometryError("scene must contain at least one subject")
        prev = 0.0
        for i, (r, l) in enumerate(subjects):
            if r <= prev:
                raise GeometryError(
                    f"subject ranges must be strictly increasing and positive; "
                    f"subject {i} has range {r} after {prev}")
            if l < 0:
                raise GeometryError(f"obstruction height of subject {i} is negative: {l}")
            prev = r


def min_elevation(scene: GeometryScene) -> tuple[list[float], float]:
    """Per-subject minimum radar elevations and their overall maximum.

    The first subject needs no elevation; each later subject i needs the radar
    high enough that every nearer subject j clears its sight line:
    h_i = max_j l_j * R_i / (R_i - R_j). Strictly increasing ranges guarantee
    the denominator never vanishes.
    """
    ranges = [r for r, _ in scene.subjects]
    heights = [l for _, l in scene.subjects]
    per_subject = [0.0]
    for i in range(1, len(ranges)):
        h_i = max(heights[j] * ranges[i] / (ranges[i] - ranges[j]) for j in range(i))
        per_subject.append(h_i)
    return per_subject, max(per_subject)


def parse_key_value_file(path) -> dict[str, str]:
    """Parse a flat key=value text file with '#' comments into a dict."""
    entries: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, value = line.split("=", 1)
            entries[key.strip()] = value.strip()
    return entries


def load_radar_config(path) -> RadarConfig:
    """Read a radar config from a key=value file with the exact documented keys."""
    entries = parse_key_value_file(path)
    missing = [k for k in CONFIG_FILE_KEYS if k not in entries]
    if missing:
        raise ConfigError(f"{path}: missing radar config keys: {', '.join(missing)}")
    unknown = [k for k in entries if k not in CONFIG_FILE_KEYS]
    if unknown:
        raise ConfigError(f"{path}: unknown radar config keys: {', '.join(sorted(unknown))}")

    def num(key):
        try:
            return float(entries[key])
        except ValueError as exc:
            raise ConfigError(f"{path}: key {key} is not a number: {entries[key]!r}") from exc

    def count(key):
        value = num(key)
        if value != int(value):
            raise ConfigError(f"{path}: key {key} must be an integer, got {entries[key]!r}")
        return int(value)

    return RadarConfig.from_primitives(
        f_min_hz=num("f_min_hz"),
        f_max_hz=num("f_max_hz"),
        t_m_s=num("t_m_s"),
        t_c_s=num("t_c_s"),
        num_chirps=count("num_chirps"),
        adc_samples=count("adc_samples"),
        adc_rate_sps=num("adc_rate_sps"),
        n_tx=count("n_tx"),
        n_rx=count("n_rx"),
    )


def save_radar_config(config: RadarConfig, path) -> None:
    """Write a config back to the key=value file format."""
    lines = [
        "# FMCW radar configuration (bandwidth and slope are derived)",
        f"f_min_hz = {config.f_min_hz:.10g}",
        f"f_max_hz = {config.f_max_hz:.10g}",
        f"t_m_s = {config.chirp_duration_s:.10g}",
        f"t_c_s = {config.chirp_period_s:.10g}",
        f"num_chirps = {config.num_chirps}",
        f"adc_samples = {config.adc_samples}",
        f"adc_rate_sps = {config.adc_rate_sps:.10g}",
        f"n_tx = {config.n_tx}",
        f"n_rx = {config.n_rx}",
    ]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
