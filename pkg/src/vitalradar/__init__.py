"""Multi-subject FMCW radar vital-sign toolkit.

Simulates multi-antenna IF captures with known breathing/heartbeat ground
truth, runs the full estimation pipeline (beamforming, range FFT,
localization, phase extraction, variational mode decomposition, comb
filtering, spectral features, regression), and models the fixed-point
hardware pipeline bit-accurately for cross-validation.
"""

__version__ = "0.1.0"

from .radar import (RadarConfig, DerivedParams, GeometryScene, derive_params,
                    min_elevation, angle_resolution, load_radar_config)
from .scene import (SubjectSpec, ClutterSpec, SimScene, DataCube,
                    chest_displacement, synthesize, scenario_preset,
                    load_scene, save_scene)
from .dsp import (AzimuthGrid, beamform, range_fft, dc_offset_correct,
                  di_variance_map, localize, extract_phase, unwrap_phase)
from .vmd import VmdParams, VmdResult, vmd_decompose, classify_modes
from .features import (FeatureVector, comb_filter, welch_estimate,
                       autocorr_estimate, peak_count_estimate, extract_features)
from .regression import (LabeledSample, Metrics, TrainedModel, train_model,
                         evaluate, save_models, load_models)
from .fpga import (FixedFormat, FixedSample, quantize, dequantize, fixed_fft,
                   psd, peak_range, cordic_atan2, stream_unwrap,
                   band_scan_estimate, compare_pipelines)
from .capture import write_capture, read_capture
from .pipeline import PipelineOptions, run_pipeline
