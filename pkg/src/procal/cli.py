"""Command-line pipeline tying calibration, propagation, and diagnostics together.

Subcommands: ``calibrate``, ``propagate``, ``diagnose``, ``sweep``,
``pipeline``, and ``fixture`` (writes a synthetic demo input set).  Exit
codes: 0 success, 2 input error, 3 numerical failure.  The environment
variables ``PROCAL_SEED`` and ``PROCAL_OUT_DIR``, when set, override the
corresponding flags.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .calibration import calibrate_sequence, keypoint_hull_mask
from .diagnostics import classify_misalignment, run_sweep
from .errors import (
    DegenerateShape,
    DimensionMismatch,
    EmptyShape,
    FewerThanThreePoints,
    FrameError,
    IndivisibleDimensions,
    InvalidGroupCount,
    MissingAxisPoints,
    NoFeasibleCandidate,
    ParseError,
    ProcalError,
    SchemaError,
)
from .fixtures import demo_pose_sequence, keypoint_rows, synthetic_person
from .propagation import group_partition, run_propagation, toy_patch_encode

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3

_NUMERIC_ERRORS = (
    DegenerateShape,
    FewerThanThreePoints,
    MissingAxisPoints,
    EmptyShape,
    NoFeasibleCandidate,
)


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, FrameError):
        return exit_code_for(exc.cause)
    if isinstance(exc, _NUMERIC_ERRORS):
        return EXIT_NUMERIC
    if isinstance(exc, (OSError, ParseError, SchemaError, DimensionMismatch,
                        IndivisibleDimensions, InvalidGroupCount, ValueError, ProcalError)):
        return EXIT_INPUT
    raise exc


def _fail(stage: str, exc: BaseException, out_dir) -> int:
    code = exit_code_for(exc)
    doc = io.error_document(stage, exc, code)
    if out_dir is not None:
        try:
            io.save_error_document(doc, Path(out_dir) / "error.json")
        except OSError:
            pass
    print(f"error [{stage}] {type(exc).__name__}: {exc}", file=sys.stderr)
    return code


def _frame_name(index: int) -> str:
    return f"frame_{index:04d}.png"


def _load_pose_inputs(ref_image_path, ref_kp_path, ref_mask_path, pose_kp_path,
                      pose_mask_dir, config):
    ref_img = io.load_image(ref_image_path)
    ref_doc = io.load_keypoint_document(ref_kp_path)
    ref_kps = io.keypoint_sets(ref_doc, config.visibility_threshold)[0]
    pose_doc = io.load_keypoint_document(pose_kp_path)
    tgt_kps = io.keypoint_sets(pose_doc, config.visibility_threshold)

    ref_dims = (ref_img.shape[1], ref_img.shape[0])
    if config.mask_source == "file" and ref_mask_path is not None:
        ref_mask = io.load_mask(ref_mask_path)
        if ref_mask.shape != ref_img.shape[:2]:
            raise DimensionMismatch(
                f"reference mask {ref_mask.shape} does not match image {ref_img.shape[:2]}"
            )
    else:
        ref_mask = keypoint_hull_mask(ref_kps, ref_dims)

    pose_dims = (pose_doc.width, pose_doc.height)
    poses = []
    for i, kps in enumerate(tgt_kps, start=1):
        if config.mask_source == "file" and pose_mask_dir is not None:
            mask = io.load_mask(Path(pose_mask_dir) / _frame_name(i))
        else:
            mask = keypoint_hull_mask(kps, pose_dims)
        poses.append((kps, mask))
    return ref_img, ref_kps, ref_mask, tgt_kps, poses


def _write_calibration_outputs(frames, out_dir) -> None:
    out_dir = Path(out_dir)
    for frame in frames:
        io.save_image(frame.image, out_dir / "calibrated" / _frame_name(frame.frame_index))
    io.save_calibration_log(frames, out_dir / "calibration_log.json")


def _diagnose_frames(ref_kps, tgt_kps):
    entries = []
    for i, kps in enumerate(tgt_kps, start=1):
        try:
            entries.append((i, classify_misalignment(ref_kps, kps)))
        except (MissingAxisPoints, EmptyShape) as exc:
            entries.append((i, str(exc)))
    return entries


def pipeline(ref_image_path, ref_kp_path, ref_mask_path, pose_kp_path,
             pose_mask_dir, out_dir, config: io.PipelineConfig, workers: int = 1) -> int:
    """End-to-end run: calibrate, encode, propagate, diagnose, manifest."""
    out_dir = Path(out_dir)
    stage = "load-inputs"
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        ref_img, ref_kps, ref_mask, tgt_kps, poses = _load_pose_inputs(
            ref_image_path, ref_kp_path, ref_mask_path, pose_kp_path, pose_mask_dir, config
        )

        stage = "calibrate"
        frames = calibrate_sequence(ref_img, ref_kps, ref_mask, poses, workers=workers)
        _write_calibration_outputs(frames, out_dir)

        stage = "encode"
        features = np.stack(
            [toy_patch_encode(frame.image, config.patch_grid) for frame in frames]
        )
        io.save_features(features, out_dir / "features.npy")

        stage = "propagate"
        # The configured group count assumes long clips; clamp to the frame
        # count so short sequences stay runnable.
        effective_groups = min(config.groups, len(frames))
        steps, schedule = run_propagation(
            features, effective_groups, config.denoise_steps, config.seed
        )
        io.save_features(np.stack(steps), out_dir / "propagated.npy")
        io.save_schedule(schedule, out_dir / "schedule.json")

        stage = "diagnose"
        io.save_diagnostics(_diagnose_frames(ref_kps, tgt_kps), out_dir / "diagnostics.json")

        stage = "manifest"
        io.save_json(
            {
                "format": "pipeline-manifest/1",
                "config": config.as_dict(),
                "groups_effective": effective_groups,
                "frame_count": len(frames),
                "inputs": {
                    "ref_image": str(ref_image_path),
                    "ref_keypoints": str(ref_kp_path),
                    "ref_mask": None if ref_mask_path is None else str(ref_mask_path),
                    "pose_keypoints": str(pose_kp_path),
                    "pose_mask_dir": None if pose_mask_dir is None else str(pose_mask_dir),
                },
                "outputs": [
                    "calibrated/",
                    "calibration_log.json",
                    "features.npy",
                    "propagated.npy",
                    "schedule.json",
                    "diagnostics.json",
                ],
            },
            out_dir / "manifest.json",
        )
    except Exception as exc:  # noqa: BLE001 - boundary maps errors to exit codes
        return _fail(stage, exc, out_dir)
    return EXIT_OK


def _config_from_args(args) -> io.PipelineConfig:
    seed = args.seed
    env_seed = os.environ.get("PROCAL_SEED")
    if env_seed is not None:
        seed = int(env_seed)
    return io.PipelineConfig(
        visibility_threshold=args.visibility_threshold,
        groups=args.groups,
        denoise_steps=args.steps,
        seed=seed,
        attention_scaling=args.attention_scaling,
        mask_source=args.mask_source,
        patch_grid=args.patch_grid,
    )


def _out_dir(args) -> Path:
    return Path(os.environ.get("PROCAL_OUT_DIR", args.out))


def cmd_calibrate(args) -> int:
    out_dir = _out_dir(args)
    stage = "load-inputs"
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        config = _config_from_args(args)
        ref_img, ref_kps, ref_mask, _, poses = _load_pose_inputs(
            args.ref_image, args.ref_keypoints, args.ref_mask,
            args.pose_keypoints, args.pose_mask_dir, config,
        )
        stage = "calibrate"
        frames = calibrate_sequence(ref_img, ref_kps, ref_mask, poses, workers=args.workers)
        _write_calibration_outputs(frames, out_dir)
    except Exception as exc:  # noqa: BLE001
        return _fail(stage, exc, out_dir)
    return EXIT_OK


def cmd_propagate(args) -> int:
    out_dir = _out_dir(args)
    stage = "load-inputs"
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        config = _config_from_args(args)
        features = io.load_features(args.features)
        stage = "propagate"
        steps, schedule = run_propagation(features, config.groups, config.denoise_steps, config.seed)
        io.save_features(np.stack(steps), out_dir / "propagated.npy")
        io.save_schedule(schedule, out_dir / "schedule.json")
    except Exception as exc:  # noqa: BLE001
        return _fail(stage, exc, out_dir)
    return EXIT_OK


def cmd_diagnose(args) -> int:
    out_dir = _out_dir(args)
    stage = "load-inputs"
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        config = _config_from_args(args)
        ref_kps = io.load_keypoints(args.ref_keypoints, config.visibility_threshold)[0]
        tgt_kps = io.load_keypoints(args.pose_keypoints, config.visibility_threshold)
        stage = "diagnose"
        io.save_diagnostics(_diagnose_frames(ref_kps, tgt_kps), out_dir / "diagnostics.json")
    except Exception as exc:  # noqa: BLE001
        return _fail(stage, exc, out_dir)
    return EXIT_OK


def cmd_sweep(args) -> int:
    out_dir = _out_dir(args)
    stage = "load-inputs"
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        config = _config_from_args(args)
        ref_img = io.load_image(args.ref_image)
        ref_kps = io.load_keypoints(args.ref_keypoints, config.visibility_threshold)[0]
        if config.mask_source == "file" and args.ref_mask is not None:
            ref_mask = io.load_mask(args.ref_mask)
        else:
            ref_mask = keypoint_hull_mask(ref_kps, (ref_img.shape[1], ref_img.shape[0]))
        steps = [float(s) for s in args.values.split(",") if s.strip()]
        stage = "sweep"
        points = run_sweep(ref_img, ref_kps, ref_mask, args.axis, steps)
        io.save_sweep(points, args.axis, out_dir / "sweep.csv", out_dir / "sweep_meta.json")
    except Exception as exc:  # noqa: BLE001
        return _fail(stage, exc, out_dir)
    return EXIT_OK


def cmd_pipeline(args) -> int:
    return pipeline(
        args.ref_image, args.ref_keypoints, args.ref_mask,
        args.pose_keypoints, args.pose_mask_dir,
        _out_dir(args), _config_from_args(args), workers=args.workers,
    )


def cmd_fixture(args) -> int:
    out_dir = _out_dir(args)
    stage = "fixture"
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        image, kps, mask = synthetic_person(size=args.size)
        io.save_image(image, out_dir / "ref.png")
        io.save_mask(mask, out_dir / "ref_mask.png")
        io.save_keypoint_document(
            io.KeypointDocument(args.size, args.size, "synthetic", [keypoint_rows(kps)]),
            out_dir / "ref_keypoints.json",
        )
        poses = demo_pose_sequence(kps, mask, frames=args.frames)
        io.save_keypoint_document(
            io.KeypointDocument(
                args.size, args.size, "synthetic",
                [keypoint_rows(pose_kps) for pose_kps, _ in poses],
            ),
            out_dir / "pose_keypoints.json",
        )
        for i, (_, pose_mask) in enumerate(poses, start=1):
            io.save_mask(pose_mask, out_dir / "pose_masks" / _frame_name(i))
    except Exception as exc:  # noqa: BLE001
        return _fail(stage, exc, out_dir)
    return EXIT_OK


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--visibility-threshold", type=float, default=0.3,
                        help="confidence below this counts as occluded (default 0.3)")
    parser.add_argument("--groups", type=int, default=30,
                        help="propagation group count (default 30)")
    parser.add_argument("--steps", type=int, default=8,
                        help="denoising step count for propagation (default 8)")
    parser.add_argument("--seed", type=int, default=0, help="propagation seed (default 0)")
    parser.add_argument("--attention-scaling", choices=("paper", "sqrt"), default="paper",
                        help="attention logit divisor: d as printed, or sqrt(d)")
    parser.add_argument("--mask-source", choices=("file", "hull"), default="file",
                        help="use supplied mask files or always rasterize keypoint hulls")
    parser.add_argument("--patch-grid", type=int, default=8,
                        help="toy encoder grid; image dims must divide by it (default 8)")


def _add_pose_inputs(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--ref-image", required=True, help="reference image (PNG)")
    parser.add_argument("--ref-keypoints", required=True, help="reference keypoint document")
    parser.add_argument("--ref-mask", default=None, help="reference silhouette mask (PNG)")
    parser.add_argument("--pose-keypoints", required=True, help="target pose keypoint document")
    parser.add_argument("--pose-mask-dir", default=None,
                        help="directory of per-frame target masks (frame_0001.png, ...)")
    parser.add_argument("--workers", type=int, default=1,
                        help="frame-level worker threads (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="procal",
        description="Procrustes calibration of a reference human image against target poses.",
        epilog="PROCAL_SEED and PROCAL_OUT_DIR environment variables override "
               "the seed and output directory flags.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="warp the reference to each target pose")
    _add_pose_inputs(p)
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("propagate", help="propagate a feature file over frame groups")
    p.add_argument("--features", required=True, help="(L, m, d) .npy feature file")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_propagate)

    p = sub.add_parser("diagnose", help="per-frame misalignment report")
    p.add_argument("--ref-keypoints", required=True)
    p.add_argument("--pose-keypoints", required=True)
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("sweep", help="synthetic scale/rotation sensitivity table")
    p.add_argument("--ref-image", required=True)
    p.add_argument("--ref-keypoints", required=True)
    p.add_argument("--ref-mask", default=None)
    p.add_argument("--axis", choices=("scale", "rotation"), required=True)
    p.add_argument("--values", required=True, help="comma-separated sweep steps")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("pipeline", help="end-to-end: calibrate, encode, propagate, diagnose")
    _add_pose_inputs(p)
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("fixture", help="write a synthetic demo input set")
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_fixture)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
