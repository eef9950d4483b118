"""Misalignment classification and synthetic scale/rotation sweeps."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .calibration import _check_image, _check_mask, mask_iou, select_subset, warp_mask
from .shape import (
    KeypointSet,
    ProcrustesTransform,
    bbox_iou,
    torso_axis_angle,
    transform_keypoints,
)

# A pair counts as misaligned when the torso axes differ by more than
# pi/6 or the bounding boxes overlap with IoU below 0.7.  Both
# comparisons are strict, so the boundary values themselves do not flag.
ROTATION_LIMIT = math.pi / 6.0
SCALE_IOU_LIMIT = 0.7


@dataclass(frozen=True)
class MisalignmentReport:
    theta: float
    abs_theta: float
    box_iou: float
    rotation_misaligned: bool
    scale_misaligned: bool
    misaligned: bool


@dataclass(frozen=True)
class SweepPoint:
    parameter: str
    value: float
    pre_score: float
    post_score: float


def misalignment_flags(theta: float, box_iou_value: float) -> tuple[bool, bool]:
    """Threshold rule on the raw metrics: (rotation flag, scale flag)."""
    return (abs(theta) > ROTATION_LIMIT, box_iou_value < SCALE_IOU_LIMIT)


def classify_misalignment(ref: KeypointSet, tgt: KeypointSet) -> MisalignmentReport:
    """Measure relative torso angle and box IoU, then apply the flag rule."""
    theta = torso_axis_angle(ref, tgt)
    iou = bbox_iou(ref, tgt)
    rotation_flag, scale_flag = misalignment_flags(theta, iou)
    return MisalignmentReport(
        theta=theta,
        abs_theta=abs(theta),
        box_iou=iou,
        rotation_misaligned=rotation_flag,
        scale_misaligned=scale_flag,
        misaligned=rotation_flag or scale_flag,
    )


def _centered_transform(scale: float, angle: float, center: np.ndarray) -> ProcrustesTransform:
    base = ProcrustesTransform.from_parts(scale, angle)
    translation = center - base.apply(center[None, :])[0]
    return ProcrustesTransform.from_parts(scale, angle, translation)


def run_sweep(
    ref_img: np.ndarray,
    ref_kps: KeypointSet,
    ref_mask: np.ndarray,
    axis: str,
    steps,
) -> list[SweepPoint]:
    """Alignment scores before and after calibration across synthetic targets.

    Each step synthesizes a target by transforming the reference keypoints
    and silhouette about the visible-keypoint centroid: rotation steps are
    angles in (-pi, pi], scale steps are positive factors.  ``pre_score``
    is the silhouette IoU without calibration, ``post_score`` the score of
    the calibrated frame.  For the scale axis the recorded value is the
    resulting relative-scale box IoU; for rotation it is the angle.
    """
    img = _check_image(ref_img, "ref_img")
    mask = _check_mask(ref_mask, "ref_mask")
    steps = [float(s) for s in steps]
    if not steps:
        raise ValueError("steps must be nonempty")
    if axis == "scale":
        if any(s <= 0.0 for s in steps):
            raise ValueError("scale steps must be positive")
    elif axis == "rotation":
        if any(not -math.pi < s <= math.pi for s in steps):
            raise ValueError("rotation steps must lie in (-pi, pi]")
    else:
        raise ValueError(f"axis must be 'scale' or 'rotation', got {axis!r}")

    out_size = (img.shape[1], img.shape[0])
    center = ref_kps.visible_points().mean(axis=0)

    points = []
    for step in steps:
        if axis == "rotation":
            synth = _centered_transform(1.0, step, center)
        else:
            synth = _centered_transform(step, 0.0, center)
        tgt_kps = transform_keypoints(ref_kps, synth)
        tgt_mask = warp_mask(mask, synth, out_size)
        pre = mask_iou(mask, tgt_mask)
        frame = select_subset(ref_kps, tgt_kps, img, mask, tgt_mask)
        if axis == "rotation":
            parameter, value = "rotation_angle", step
        else:
            parameter, value = "scale_iou", bbox_iou(ref_kps, tgt_kps)
        points.append(SweepPoint(parameter, value, pre, frame.score))
    return points
