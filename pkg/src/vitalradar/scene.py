"""Synthetic multi-subject IF data cubes with known ground truth.

Subjects are point reflectors whose range oscillates with breathing and
heartbeat; each (chirp, channel, sample) cell gets the sum of per-subject
complex IF contributions, static clutter, and optional complex AWGN.
"""

from __future__ import annotations

import hashlib
import math
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .errors import SceneError
from .radar import RadarConfig, SPEED_OF_LIGHT, derive_params, parse_key_value_file

BR_BAND_HZ = (0.05, 0.6)   # 3..36 breaths per minute
HR_BAND_HZ = (0.8, 2.0)    # 48..120 beats per minute

# Stream tags keep subject-motion and noise RNG draws independent.
_SUBJECT_TAG = 0x53554253
_NOISE_TAG = 0x4E4F4953
_SWAY_CUTOFF_HZ = 0.1


@dataclass(frozen=True)
class SubjectSpec:
    """A breathing point target: position, vital rates, and motion amplitudes."""

    range_m: float
    azimuth_deg: float
    br_hz: float
    hr_hz: float
    breath_amplitude_m: float = 5e-3
    heart_amplitude_m: float = 2e-4
    breath_harmonics: tuple = ()     # (harmonic index, relative amplitude) pairs
    rcs_amplitude: float = 1.0
    posture_jitter_std_m: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "breath_harmonics",
                           tuple((int(h), float(a)) for h, a in self.breath_harmonics))
        if self.range_m <= 0:
            raise SceneError(f"subject range must be positive, got {self.range_m}")
        if not BR_BAND_HZ[0] <= self.br_hz <= BR_BAND_HZ[1]:
            raise SceneError(f"br_hz {self.br_hz} outside physiological band {BR_BAND_HZ}")
        if not HR_BAND_HZ[0] <= self.hr_hz <= HR_BAND_HZ[1]:
            raise SceneError(f"hr_hz {self.hr_hz} outside physiological band {HR_BAND_HZ}")
        # Zero amplitude is allowed as a degenerate (motionless) special case.
        if self.breath_amplitude_m != 0.0 and not 1e-3 <= self.breath_amplitude_m <= 12e-3:
            raise SceneError(
                f"breath_amplitude_m {self.breath_amplitude_m} outside [1e-3, 12e-3] m")
        if self.heart_amplitude_m != 0.0 and not 1e-5 <= self.heart_amplitude_m <= 5e-4:
            raise SceneError(
                f"heart_amplitude_m {self.heart_amplitude_m} outside [1e-5, 5e-4] m")
        if self.rcs_amplitude < 0:
            raise SceneError(f"rcs_amplitude must be >= 0, got {self.rcs_amplitude}")
        if self.posture_jitter_std_m < 0:
            raise SceneError(f"posture_jitter_std_m must be >= 0, got {self.posture_jitter_std_m}")


@dataclass(frozen=True)
class ClutterSpec:
    """Static zero-Doppler reflectors: (range_m, azimuth_deg, amplitude) triples."""

    reflectors: tuple = ()

    def __post_init__(self):
        reflectors = tuple((float(r), float(a), float(amp)) for r, a, amp in self.reflectors)
        object.__setattr__(self, "reflectors", reflectors)
        for r, _, amp in reflectors:
            if r <= 0:
                raise SceneError(f"clutter range must be positive, got {r}")
            if amp < 0:
                raise SceneError(f"clutter amplitude must be >= 0, got {amp}")


@dataclass(frozen=True)
class SimScene:
    """Subjects + clutter + noise level + master seed for one capture."""

    subjects: tuple
    clutter: ClutterSpec = ClutterSpec()
    snr_db: float | None = None   # None = noiseless; else AWGN relative to strongest return
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "subjects", tuple(self.subjects))
        object.__setattr__(self, "seed", int(self.seed))


@dataclass
class DataCube:
    """Complex IF samples indexed (chirp m, virtual channel j, fast-time n)."""

    samples: np.ndarray
    config: RadarConfig

    def __post_init__(self):
        expected = (self.config.num_chirps,
                    self.config.n_tx * self.config.n_rx,
                    self.config.adc_samples)
        if self.samples.shape != expected:
            raise SceneError(f"cube shape {self.samples.shape} != (M, J, N) = {expected}")
        if not np.all(np.isfinite(self.samples)):
            raise SceneError("cube contains non-finite samples")


def _subject_stream_key(subject: SubjectSpec) -> int:
    """Stable 64-bit key for a subject's private RNG stream.

    Keyed on the subject's parameters (not its index in the scene) so that
    adding or removing other subjects never changes this subject's motion,
    which keeps noiseless synthesis exactly linear in the subject list.
    """
    payload = struct.pack(
        "<9d",
        subject.range_m, subject.azimuth_deg, subject.br_hz, subject.hr_hz,
        subject.breath_amplitude_m, subject.heart_amplitude_m,
        subject.rcs_amplitude, subject.posture_jitter_std_m,
        float(len(subject.breath_harmonics)),
    )
    for h, a in subject.breath_harmonics:
        payload += struct.pack("<qd", h, a)
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def chest_displacement(subject: SubjectSpec, num_chirps: int, chirp_period_s: float,
                       seed) -> np.ndarray:
    """Chest displacement series x(t) sampled at the slow-time rate.

    x[m] = breath_amplitude * (sin(2 pi br t) + sum_h a_h sin(2 pi h br t))
         + heart_amplitude * sin(2 pi hr t + phi0)
         + body sway (integrated random walk low-passed at 0.1 Hz, scaled to
           posture_jitter_std_m)

    phi0 and the sway path are drawn from ``seed``; identical arguments give
    a bit-identical series.
    """
    t = np.arange(num_chirps) * chirp_period_s
    rng = np.random.default_rng(seed)
    phi0 = rng.uniform(0.0, 2.0 * np.pi)

    x = subject.breath_amplitude_m * np.sin(2.0 * np.pi * subject.br_hz * t)
    for h, a in subject.breath_harmonics:
        x += subject.breath_amplitude_m * a * np.sin(2.0 * np.pi * h * subject.br_hz * t)
    x += subject.heart_amplitude_m * np.sin(2.0 * np.pi * subject.hr_hz * t + phi0)

    if subject.posture_jitter_std_m > 0.0:
        walk = np.cumsum(rng.standard_normal(num_chirps))
        alpha = 1.0 - math.exp(-2.0 * math.pi * _SWAY_CUTOFF_HZ * chirp_period_s)
        sway = lfilter([alpha], [1.0, -(1.0 - alpha)], walk)
        sway = sway - sway.mean()
        std = sway.std()
        if std > 0.0:
            x += subject.posture_jitter_std_m * sway / std
    return x


def _reflector_contribution(cube, config, derived, range_m, azimuth_deg, amplitude,
                            displacement=None):
    """Accumulate one reflector's IF contribution into the cube in place."""
    m_count, j_count, n_count = cube.shape
    f_b = 2.0 * config.chirp_slope_hz_per_s * range_m / SPEED_OF_LIGHT
    fast = np.exp(2j * np.pi * f_b * np.arange(n_count) / config.adc_rate_sps)
    chan = np.exp(1j * np.pi * np.arange(j_count) * math.sin(math.radians(azimuth_deg)))
    if displacement is None:
        slow = np.full(m_count, np.exp(4j * np.pi * range_m / derived.lambda_max_m))
    else:
        slow = np.exp(4j * np.pi * (range_m + displacement) / derived.lambda_max_m)
    cube += amplitude * slow[:, None, None] * chan[None, :, None] * fast[None, None, :]


def synthesize(scene: SimScene, config: RadarConfig) -> DataCube:
    """Render a scene to a complex IF data cube.

    Per-subject amplitude follows a 1/R^2 spread law on top of the configured
    reflectivity; the beat frequency is frozen at the nominal range while the
    chest displacement rides on the slow-time phase (stop-and-hop). Noise
    power is referenced to the strongest subject return (falling back to the
    strongest clutter return, then unit power, for subject-free scenes).
    """
    derived = derive_params(config)
    m_count = config.num_chirps
    j_count = config.n_tx * config.n_rx
    n_count = config.adc_samples

    for i, subject in enumerate(scene.subjects):
        if subject.range_m > derived.r_max_constrained_m:
            raise SceneError(
                f"subject {i} at {subject.range_m} m exceeds constrained maximum range "
                f"{derived.r_max_constrained_m:.3f} m")
    _warn_on_close_pairs(scene, derived)

    cube = np.zeros((m_count, j_count, n_count), dtype=np.complex128)
    subject_amps = []
    for subject in scene.subjects:
        x = chest_displacement(subject, m_count, config.chirp_period_s,
                               (scene.seed, _SUBJECT_TAG, _subject_stream_key(subject)))
        amp = subject.rcs_amplitude / subject.range_m**2
        subject_amps.append(amp)
        _reflector_contribution(cube, config, derived, subject.range_m,
                                subject.azimuth_deg, amp, displacement=x)

    clutter_amps = []
    for range_m, azimuth_deg, amplitude in scene.clutter.reflectors:
        amp = amplitude / range_m**2
        clutter_amps.append(amp)
        _reflector_contribution(cube, config, derived, range_m, azimuth_deg, amp)

    if scene.snr_db is not None and math.isfinite(scene.snr_db):
        if subject_amps:
            ref_power = max(subject_amps) ** 2
        elif clutter_amps:
            ref_power = max(clutter_amps) ** 2
        else:
            ref_power = 1.0
        noise_var = ref_power * 10.0 ** (-scene.snr_db / 10.0)
        sigma = math.sqrt(noise_var / 2.0)
        for m in range(m_count):
            rng = np.random.default_rng((scene.seed, _NOISE_TAG, m))
            draw = rng.standard_normal((j_count, n_count, 2))
            cube[m] += sigma * (draw[..., 0] + 1j * draw[..., 1])

    return DataCube(samples=cube, config=config)


def _warn_on_close_pairs(scene: SimScene, derived) -> None:
    subjects = scene.subjects
    for i in range(len(subjects)):
        for k in range(i + 1, len(subjects)):
            dr = abs(subjects[i].range_m - subjects[k].range_m)
            da = abs(subjects[i].azimuth_deg - subjects[k].azimuth_deg)
            if dr < derived.range_bin_m and da < derived.angle_resolution_deg:
                warnings.warn(
                    f"subjects {i} and {k} are separated by less than one range bin "
                    f"and less than the angle resolution; they may merge", stacklevel=3)


# ---------------------------------------------------------------------------
# Experiment presets

PRESET_NAMES = (
    "distance_sweep_1..7m",
    "azimuth_sweep_0..60",
    "elevation_sweep",
    "tilt_sweep",
    "zigzag_five",
)

_SEATED_JITTER_M = 3e-4
_STANDING_JITTER_M = 1.5e-3
_DEFAULT_HARMONICS = ((2, 0.25), (3, 0.05))


def _subject(range_m, azimuth_deg, br_hz, hr_hz, jitter=_SEATED_JITTER_M,
             harmonics=_DEFAULT_HARMONICS):
    return SubjectSpec(
        range_m=range_m, azimuth_deg=azimuth_deg, br_hz=br_hz, hr_hz=hr_hz,
        breath_amplitude_m=5e-3, heart_amplitude_m=3e-4,
        breath_harmonics=harmonics, rcs_amplitude=0.5,
        posture_jitter_std_m=jitter,
    )


def scenario_preset(name: str, seed: int = 0) -> list[tuple[str, SimScene]]:
    """Scenes for the named experiment, as (label, scene) pairs.

    Sweep presets return one scene per swept value. Elevation and tilt have
    no direct geometric effect on the simulated IF signal, so those sweeps
    degrade SNR and inflate posture jitter monotonically with the swept
    variable as a proxy for the observed signal-quality loss.
    """
    if name == "distance_sweep_1..7m":
        return [
            (f"distance_{r}m",
             SimScene(subjects=(_subject(float(r), 0.0, 0.28, 1.15),),
                      snr_db=25.0, seed=seed))
            for r in range(1, 8)
        ]
    if name == "azimuth_sweep_0..60":
        azimuths = (0.0, 20.0, -20.0, 40.0, -40.0, 60.0, -60.0)
        rates = ((0.22, 0.95), (0.27, 1.1), (0.32, 1.25), (0.37, 1.4),
                 (0.42, 1.55), (0.47, 1.7), (0.52, 1.85))
        subjects = tuple(_subject(1.0, az, br, hr)
                         for az, (br, hr) in zip(azimuths, rates))
        return [("azimuth_sweep", SimScene(subjects=subjects, snr_db=25.0, seed=seed))]
    if name == "elevation_sweep":
        scenes = []
        for value, snr, jitter in ((0, 28.0, 3e-4), (10, 24.0, 7e-4),
                                   (15, 20.0, 1.1e-3), (20, 16.0, 1.5e-3)):
            scenes.append((f"elevation_{value}cm",
                           SimScene(subjects=(_subject(1.0, 0.0, 0.3, 1.2, jitter=jitter),),
                                    snr_db=snr, seed=seed)))
        return scenes
    if name == "tilt_sweep":
        scenes = []
        for value, snr, jitter in ((0, 28.0, 3e-4), (10, 24.0, 7e-4),
                                   (20, 20.0, 1.1e-3), (30, 16.0, 1.5e-3)):
            scenes.append((f"tilt_{value}deg",
                           SimScene(subjects=(_subject(1.0, 0.0, 0.3, 1.2, jitter=jitter),),
                                    snr_db=snr, seed=seed)))
        return scenes
    if name == "zigzag_five":
        layout = (
            # range, azimuth, br, hr, jitter (three seated, last two standing)
            (1.0, 16.0, 0.25, 1.10, _SEATED_JITTER_M),
            (2.2, -16.0, 0.30, 1.30, _SEATED_JITTER_M),
            (3.4, 16.0, 0.20, 0.90, _SEATED_JITTER_M),
            (4.6, -16.0, 0.35, 1.50, _STANDING_JITTER_M),
            (5.8, 16.0, 0.28, 1.22, _STANDING_JITTER_M),
        )
        subjects = tuple(_subject(r, az, br, hr, jitter=j) for r, az, br, hr, j in layout)
        return [("zigzag_five", SimScene(subjects=subjects, snr_db=20.0, seed=seed))]
    raise SceneError(
        f"unknown preset {name!r}; available presets: {', '.join(PRESET_NAMES)}")


# ---------------------------------------------------------------------------
# Scene file round-trip (flat key=value with indexed subject/clutter blocks)

DEFAULT_OBSTRUCTION_M = 0.4


@dataclass
class SceneDocument:
    """A scene file: the simulation scene plus planning-only geometry fields."""

    sim: SimScene
    obstructions_m: tuple = ()   # per-subject vertical extent, for elevation planning
    radar_height_m: float = 0.0
    radar_tilt_deg: float = 0.0


def load_scene(path) -> SceneDocument:
    """Parse a scene file (see ``save_scene`` for the key layout)."""
    entries = parse_key_value_file(path)

    def pop_float(key, default=None):
        if key in entries:
            return float(entries.pop(key))
        if default is None:
            raise SceneError(f"{path}: missing required scene key {key}")
        return default

    seed = int(float(entries.pop("seed", "0")))
    snr_raw = entries.pop("snr_db", "none").lower()
    snr_db = None if snr_raw in ("none", "inf") else float(snr_raw)
    radar_height = float(entries.pop("radar_height_m", "0"))
    radar_tilt = float(entries.pop("radar_tilt_deg", "0"))

    subjects = []
    obstructions = []
    i = 0
    while f"subject.{i}.range_m" in entries:
        prefix = f"subject.{i}."
        harmonics = ()
        raw = entries.pop(prefix + "harmonics", "")
        if raw:
            harmonics = tuple(
                (int(part.split(":")[0]), float(part.split(":")[1]))
                for part in raw.split(",") if part.strip())
        subjects.append(SubjectSpec(
            range_m=pop_float(prefix + "range_m"),
            azimuth_deg=pop_float(prefix + "azimuth_deg"),
            br_hz=pop_float(prefix + "br_hz"),
            hr_hz=pop_float(prefix + "hr_hz"),
            breath_amplitude_m=pop_float(prefix + "breath_amplitude_m", 5e-3),
            heart_amplitude_m=pop_float(prefix + "heart_amplitude_m", 2e-4),
            breath_harmonics=harmonics,
            rcs_amplitude=pop_float(prefix + "rcs", 1.0),
            posture_jitter_std_m=pop_float(prefix + "jitter_std_m", 0.0),
        ))
        obstructions.append(pop_float(prefix + "obstruction_m", DEFAULT_OBSTRUCTION_M))
        i += 1

    reflectors = []
    i = 0
    while f"clutter.{i}.range_m" in entries:
        prefix = f"clutter.{i}."
        reflectors.append((
            pop_float(prefix + "range_m"),
            pop_float(prefix + "azimuth_deg", 0.0),
            pop_float(prefix + "amplitude", 1.0),
        ))
        i += 1

    if entries:
        raise SceneError(f"{path}: unknown scene keys: {', '.join(sorted(entries))}")
    if not subjects and not reflectors:
        warnings.warn(f"{path}: scene contains no subjects and no clutter")

    sim = SimScene(subjects=tuple(subjects), clutter=ClutterSpec(tuple(reflectors)),
                   snr_db=snr_db, seed=seed)
    return SceneDocument(sim=sim, obstructions_m=tuple(obstructions),
                         radar_height_m=radar_height, radar_tilt_deg=radar_tilt)


def save_scene(doc: SceneDocument, path) -> None:
    """Write a scene file with indexed subject/clutter blocks."""
    sim = doc.sim
    lines = ["# vital-sign radar scene", f"seed = {sim.seed}"]
    lines.append(f"snr_db = {'none' if sim.snr_db is None else f'{sim.snr_db:.10g}'}")
    if doc.radar_height_m:
        lines.append(f"radar_height_m = {doc.radar_height_m:.10g}")
    if doc.radar_tilt_deg:
        lines.append(f"radar_tilt_deg = {doc.radar_tilt_deg:.10g}")
    obstructions = doc.obstructions_m or tuple(DEFAULT_OBSTRUCTION_M for _ in sim.subjects)
    for i, s in enumerate(sim.subjects):
        lines.append(f"subject.{i}.range_m = {s.range_m:.10g}")
        lines.append(f"subject.{i}.azimuth_deg = {s.azimuth_deg:.10g}")
        lines.append(f"subject.{i}.br_hz = {s.br_hz:.10g}")
        lines.append(f"subject.{i}.hr_hz = {s.hr_hz:.10g}")
        lines.append(f"subject.{i}.breath_amplitude_m = {s.breath_amplitude_m:.10g}")
        lines.append(f"subject.{i}.heart_amplitude_m = {s.heart_amplitude_m:.10g}")
        if s.breath_harmonics:
            packed = ",".join(f"{h}:{a:.10g}" for h, a in s.breath_harmonics)
            lines.append(f"subject.{i}.harmonics = {packed}")
        lines.append(f"subject.{i}.rcs = {s.rcs_amplitude:.10g}")
        lines.append(f"subject.{i}.jitter_std_m = {s.posture_jitter_std_m:.10g}")
        lines.append(f"subject.{i}.obstruction_m = {obstructions[i]:.10g}")
    for i, (r, az, amp) in enumerate(sim.clutter.reflectors):
        lines.append(f"clutter.{i}.range_m = {r:.10g}")
        lines.append(f"clutter.{i}.azimuth_deg = {az:.10g}")
        lines.append(f"clutter.{i}.amplitude = {amp:.10g}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
