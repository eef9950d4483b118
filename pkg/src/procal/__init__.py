"""Procrustes calibration toolkit for human pose sequences.

Given a reference human image with keypoints and a target pose keypoint
sequence, this package aligns the reference to each target pose with a
closed-form similarity transform, warps and background-screens the
reference image per frame, builds temporally propagated feature schedules,
and reports scale/rotation misalignment diagnostics.
"""

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
from .shape import (
    ARM_SLOTS,
    FACE_SLOTS,
    GROUP_ORDER,
    GROUP_SLOTS,
    LEG_SLOTS,
    NUM_SLOTS,
    TORSO_SLOTS,
    KeypointSet,
    PairedPointSets,
    ProcrustesTransform,
    apply_transform,
    bbox_iou,
    common_visible,
    residual,
    rotation_matrix,
    solve_procrustes,
    torso_axis_angle,
    transform_keypoints,
    wrap_angle,
)
from .calibration import (
    CalibratedFrame,
    SubsetCandidate,
    calibrate_sequence,
    enumerate_candidates,
    ensure_alpha,
    keypoint_hull_mask,
    mask_iou,
    select_subset,
    warp_image,
    warp_mask,
)
from .propagation import (
    GroupPartition,
    PropagationSchedule,
    assemble_condition,
    cross_attention,
    draw_picks,
    group_partition,
    propagate_step,
    replay_schedule,
    run_propagation,
    toy_patch_encode,
)
from .diagnostics import (
    ROTATION_LIMIT,
    SCALE_IOU_LIMIT,
    MisalignmentReport,
    SweepPoint,
    classify_misalignment,
    misalignment_flags,
    run_sweep,
)
from .io import PipelineConfig

__version__ = "0.1.0"

__all__ = [
    "ARM_SLOTS",
    "CalibratedFrame",
    "DegenerateShape",
    "DimensionMismatch",
    "EmptyShape",
    "FACE_SLOTS",
    "FewerThanThreePoints",
    "FrameError",
    "GROUP_ORDER",
    "GROUP_SLOTS",
    "GroupPartition",
    "IndivisibleDimensions",
    "InvalidGroupCount",
    "KeypointSet",
    "LEG_SLOTS",
    "MisalignmentReport",
    "MissingAxisPoints",
    "NoFeasibleCandidate",
    "NUM_SLOTS",
    "PairedPointSets",
    "ParseError",
    "PipelineConfig",
    "ProcalError",
    "ProcrustesTransform",
    "PropagationSchedule",
    "ROTATION_LIMIT",
    "SCALE_IOU_LIMIT",
    "SchemaError",
    "SubsetCandidate",
    "SweepPoint",
    "TORSO_SLOTS",
    "apply_transform",
    "assemble_condition",
    "bbox_iou",
    "calibrate_sequence",
    "classify_misalignment",
    "common_visible",
    "cross_attention",
    "draw_picks",
    "enumerate_candidates",
    "ensure_alpha",
    "group_partition",
    "keypoint_hull_mask",
    "mask_iou",
    "misalignment_flags",
    "propagate_step",
    "replay_schedule",
    "residual",
    "rotation_matrix",
    "run_propagation",
    "run_sweep",
    "select_subset",
    "solve_procrustes",
    "torso_axis_angle",
    "toy_patch_encode",
    "transform_keypoints",
    "warp_image",
    "warp_mask",
    "wrap_angle",
]
