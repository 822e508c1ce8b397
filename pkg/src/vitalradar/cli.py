"""Command-line entry points.

Exit codes: 0 success, 1 usage error, 2 data error, 3 no subjects found.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from .errors import SceneError, VitalRadarError
from .features import FEATURE_ORDER, FeatureVector
from .pipeline import PipelineOptions, run_pipeline
from .radar import GeometryScene, RadarConfig, load_radar_config, min_elevation
from .regression import (LabeledSample, MODEL_KINDS, evaluate, load_models,
                         save_models, train_model)
from .scene import PRESET_NAMES, SceneDocument, load_scene, save_scene, scenario_preset, synthesize
from .capture import write_capture

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NO_SUBJECTS = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _read_table(path, expected_header):
    """Read a CSV written by this tool; returns list of value tuples."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise VitalRadarError(f"{path}: empty table")
    header = tuple(lines[0].split(","))
    if header != tuple(expected_header):
        raise VitalRadarError(
            f"{path}: header {header} does not match expected {tuple(expected_header)}")
    return [tuple(ln.split(",")) for ln in lines[1:]]


def _load_dataset(features_path, labels_path):
    feat_rows = _read_table(features_path, FEATURE_ORDER + ("flags",))
    label_rows = _read_table(labels_path, ("br_brpm", "hr_bpm"))
    if len(feat_rows) != len(label_rows):
        raise VitalRadarError(
            f"{features_path} has {len(feat_rows)} rows but {labels_path} has "
            f"{len(label_rows)}")
    dataset = []
    for feats, labels in zip(feat_rows, label_rows):
        vector = FeatureVector.from_array([float(v) for v in feats[:9]],
                                          flag_mask=int(feats[9]))
        dataset.append(LabeledSample(features=vector, br_brpm=float(labels[0]),
                                     hr_bpm=float(labels[1])))
    return dataset


def cmd_simulate(args) -> int:
    doc = load_scene(args.scene)
    config = load_radar_config(args.radar) if args.radar else RadarConfig.iwr1642_default()
    sim = doc.sim
    if args.seed is not None:
        sim = type(sim)(subjects=sim.subjects, clutter=sim.clutter,
                        snr_db=sim.snr_db, seed=args.seed)
    cube = synthesize(sim, config)
    clipped = write_capture(cube, args.out)
    print(f"wrote {args.out}: M={config.num_chirps} J={config.n_tx * config.n_rx} "
          f"N={config.adc_samples}, {len(sim.subjects)} subjects, seed={sim.seed}"
          + (f", {clipped} clipped components" if clipped else ""))
    return EXIT_OK


def cmd_process(args) -> int:
    options = PipelineOptions(
        rel_threshold=args.threshold, max_subjects=args.max_subjects,
        model_path=args.model, fixed_point=args.fixed_point,
        trace=args.trace, plots=args.plots)
    result = run_pipeline(args.infile, args.out_dir, options)
    for e in result.estimates:
        print(f"subject {e.subject_id}: range {e.range_m:.2f} m, azimuth "
              f"{e.azimuth_deg:+.0f} deg, BR {e.br_brpm:.1f} BRPM, HR {e.hr_bpm:.1f} BPM "
              f"(confidence {e.confidence:.2f})")
    if result.status == "no_subjects":
        print("no subjects found")
        return EXIT_NO_SUBJECTS
    print(f"outputs in {result.out_dir}")
    return EXIT_OK


def cmd_plan(args) -> int:
    doc = load_scene(args.scene)
    ordered = sorted(zip((s.range_m for s in doc.sim.subjects), doc.obstructions_m))
    scene = GeometryScene(subjects=tuple(ordered),
                          radar_height_m=doc.radar_height_m,
                          radar_tilt_deg=doc.radar_tilt_deg)
    per_subject, h_min = min_elevation(scene)
    print("subject  range_m  obstruction_m  h_i_m")
    for i, ((r, l), h) in enumerate(zip(scene.subjects, per_subject), start=1):
        print(f"{i:7d}  {r:7.3f}  {l:13.3f}  {h:6.3f}")
    print(f"h_min = {h_min:.3f} m")
    return EXIT_OK


def cmd_train(args) -> int:
    dataset = _load_dataset(args.features, args.labels)
    result = train_model(dataset, args.model_kind, split=args.split, seed=args.seed)
    save_models(result, args.out)
    print(f"trained {args.model_kind} on {len(dataset)} samples (split {args.split}, "
          f"seed {args.seed})")
    print(f"held-out BR: R2 = {result.br_metrics.r2:.4f}, MAE = "
          f"{result.br_metrics.mae:.3f} BRPM")
    print(f"held-out HR: R2 = {result.hr_metrics.r2:.4f}, MAE = "
          f"{result.hr_metrics.mae:.3f} BPM")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    br_model, hr_model = load_models(args.model)
    dataset = _load_dataset(args.features, args.labels)
    x = np.stack([s.features.as_array() for s in dataset])
    br_metrics = evaluate(br_model.predict(x), np.array([s.br_brpm for s in dataset]))
    hr_metrics = evaluate(hr_model.predict(x), np.array([s.hr_bpm for s in dataset]))
    print(f"model kind: {br_model.kind} (seed {br_model.seed}, split {br_model.split})")
    print(f"BR: R2 = {br_metrics.r2:.4f}, MAE = {br_metrics.mae:.3f} BRPM"
          + ("" if br_metrics.r2_defined else " (R2 undefined: zero label variance)"))
    print(f"HR: R2 = {hr_metrics.r2:.4f}, MAE = {hr_metrics.mae:.3f} BPM"
          + ("" if hr_metrics.r2_defined else " (R2 undefined: zero label variance)"))
    return EXIT_OK


def cmd_preset(args) -> int:
    try:
        scenes = scenario_preset(args.name, seed=args.seed)
    except SceneError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    os.makedirs(args.out, exist_ok=True)
    for label, sim in scenes:
        path = os.path.join(args.out, f"{label}.scene")
        save_scene(SceneDocument(sim=sim), path)
        print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="vitalradar",
                     description="FMCW radar vital-sign simulation and estimation toolkit")
    parser.add_argument("--version", action="version", version=f"vitalradar {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render a scene file to a binary capture")
    p.add_argument("--scene", required=True, help="scene file (key=value)")
    p.add_argument("--radar", help="radar config file; default: built-in 77 GHz profile")
    p.add_argument("--seed", type=int, help="override the scene's seed")
    p.add_argument("--out", required=True, help="output capture path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("process", help="run the estimation pipeline on a capture")
    p.add_argument("--in", dest="infile", required=True, help="capture file")
    p.add_argument("--model", help="regression model file (Welch-only estimates if absent)")
    p.add_argument("--fixed-point", action="store_true",
                   help="also run the fixed-point model (single-subject captures)")
    p.add_argument("--trace", action="store_true", help="dump fpga_trace.csv")
    p.add_argument("--plots", action="store_true", help="render PNG figures")
    p.add_argument("--threshold", type=float, default=0.15,
                   help="relative localization threshold (default 0.15)")
    p.add_argument("--max-subjects", type=int, default=8)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_process)

    p = sub.add_parser("plan", help="minimum radar elevation for line of sight")
    p.add_argument("--scene", required=True)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("train", help="train BR/HR regression models")
    p.add_argument("--features", required=True, help="features.csv")
    p.add_argument("--labels", required=True, help="labels.csv (br_brpm, hr_bpm)")
    p.add_argument("--model-kind", required=True, choices=MODEL_KINDS)
    p.add_argument("--split", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output model file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a model against labeled features")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("preset", help="write scene files for a named experiment")
    p.add_argument("--name", required=True,
                   help="one of: " + ", ".join(PRESET_NAMES))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory for .scene files")
    p.set_defaults(func=cmd_preset)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE
    try:
        return args.func(args)
    except VitalRadarError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_DATA
    except OSError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
