"""Deterministic synthetic person fixtures for demos and tests.

The generated figure is a stylized human silhouette (head disc, torso
quad, limb capsules) with a smooth textured image behind it, plus a
matching 17-slot keypoint set.  Everything is computed from closed-form
rasterization, so repeated calls are bit-identical.
"""

from __future__ import annotations

import numpy as np

from .shape import KeypointSet, NUM_SLOTS, ProcrustesTransform, transform_keypoints
from .calibration import warp_mask

# Keypoint layout as (x, y) fractions of the figure height, pelvis at the
# origin, y growing down.
_LAYOUT = np.array([
    (0.000, -0.450),   # nose
    (-0.030, -0.490), (0.030, -0.490),   # eyes
    (-0.065, -0.470), (0.065, -0.470),   # ears
    (-0.160, -0.300), (0.160, -0.300),   # shoulders
    (-0.090, 0.000), (0.090, 0.000),     # hips
    (-0.230, -0.140), (0.230, -0.140),   # elbows
    (-0.270, 0.040), (0.270, 0.040),     # wrists
    (-0.080, 0.260), (0.080, 0.260),     # knees
    (-0.090, 0.500), (0.090, 0.500),     # ankles
])

_HEAD_CENTER = np.array([0.0, -0.470])
_HEAD_RADIUS = 0.105


def _capsule(xs, ys, a, b, radius):
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        dist2 = (xs - a[0]) ** 2 + (ys - a[1]) ** 2
    else:
        t = np.clip(((xs - a[0]) * ab[0] + (ys - a[1]) * ab[1]) / denom, 0.0, 1.0)
        dist2 = (xs - (a[0] + t * ab[0])) ** 2 + (ys - (a[1] + t * ab[1])) ** 2
    return dist2 <= radius * radius


def _convex_fill(xs, ys, vertices):
    inside = np.ones(xs.shape, dtype=bool)
    n = len(vertices)
    for i in range(n):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % n]
        inside &= (x2 - x1) * (ys - y1) - (y2 - y1) * (xs - x1) >= -1e-9
    return inside


def person_keypoints(size: int = 256, height: float = 110.0, center=None) -> KeypointSet:
    """Keypoints of the synthetic figure on a square canvas."""
    if center is None:
        center = (size / 2.0, size / 2.0)
    pts = _LAYOUT * height + np.asarray(center, dtype=float)
    return KeypointSet.fully_visible(pts)


def _part_masks(size, height, center):
    kps = person_keypoints(size, height, center)
    p = kps.points
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    c = np.asarray(center, dtype=float)

    head = (xs - (c[0] + _HEAD_CENTER[0] * height)) ** 2 + (
        ys - (c[1] + _HEAD_CENTER[1] * height)
    ) ** 2 <= (_HEAD_RADIUS * height) ** 2
    neck = _capsule(xs, ys, c + np.array([0.0, -0.40 * height]), c + np.array([0.0, -0.30 * height]), 0.04 * height)
    head |= neck

    # Torso: shoulder/hip quad in positive winding order for the half-plane
    # fill, thickened along the sides.
    torso = _convex_fill(xs, ys, [p[5], p[6], p[8], p[7]])
    torso |= _capsule(xs, ys, p[5], p[7], 0.05 * height)
    torso |= _capsule(xs, ys, p[6], p[8], 0.05 * height)
    torso |= _capsule(xs, ys, p[5], p[6], 0.05 * height)
    torso |= _capsule(xs, ys, p[7], p[8], 0.06 * height)

    arms = np.zeros_like(torso)
    for shoulder, elbow, wrist in ((p[5], p[9], p[11]), (p[6], p[10], p[12])):
        arms |= _capsule(xs, ys, shoulder, elbow, 0.036 * height)
        arms |= _capsule(xs, ys, elbow, wrist, 0.032 * height)

    legs = np.zeros_like(torso)
    for hip, knee, ankle in ((p[7], p[13], p[15]), (p[8], p[14], p[16])):
        legs |= _capsule(xs, ys, hip, knee, 0.05 * height)
        legs |= _capsule(xs, ys, knee, ankle, 0.042 * height)

    return kps, head, torso, arms, legs


def synthetic_person(size: int = 256, height: float = 110.0, center=None):
    """Build (image, keypoints, mask) for the synthetic figure.

    The image is RGB uint8: a smooth gradient background with the figure
    painted in flat part colors plus gentle shading.
    """
    if center is None:
        center = (size / 2.0, size / 2.0)
    kps, head, torso, arms, legs = _part_masks(size, float(height), center)
    mask = head | torso | arms | legs

    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    image = np.empty((size, size, 3), dtype=np.float64)
    image[..., 0] = 70.0 + 0.25 * xs
    image[..., 1] = 90.0 + 0.20 * ys
    image[..., 2] = 120.0 + 0.10 * xs + 0.10 * ys

    shading = 0.85 + 0.15 * np.sin(2.0 * np.pi * ys / 41.0)
    colors = {
        "legs": (52.0, 56.0, 84.0),
        "arms": (80.0, 120.0, 205.0),
        "torso": (62.0, 96.0, 196.0),
        "head": (226.0, 182.0, 152.0),
    }
    for name, part in (("legs", legs), ("arms", arms), ("torso", torso), ("head", head)):
        for ch, value in enumerate(colors[name]):
            plane = image[..., ch]
            plane[part] = value * shading[part]
    return np.rint(image).clip(0, 255).astype(np.uint8), kps, mask


def centered_transform(scale: float, angle: float, center, shift=(0.0, 0.0)) -> ProcrustesTransform:
    """Similarity that keeps ``center`` fixed, then shifts by ``shift``."""
    base = ProcrustesTransform.from_parts(scale, angle)
    anchor = np.asarray(center, dtype=float)
    translation = anchor - base.apply(anchor[None, :])[0] + np.asarray(shift, dtype=float)
    return ProcrustesTransform.from_parts(scale, angle, translation)


# (scale, angle, shift) rows for the bundled demo motion; mixes aligned
# frames with rotation- and scale-misaligned ones.
_DEMO_MOTION = (
    (1.00, 0.00, (0.0, 0.0)),
    (1.00, np.pi / 12.0, (0.0, 0.0)),
    (1.00, -0.70, (4.0, -2.0)),
    (0.80, 0.00, (0.0, 0.0)),
    (1.30, 0.10, (-6.0, 3.0)),
    (0.90, 0.17, (12.0, -8.0)),
    (1.00, -1.31, (0.0, 5.0)),
    (0.65, 0.05, (-10.0, 6.0)),
)


def demo_pose_sequence(ref_kps: KeypointSet, ref_mask: np.ndarray, frames: int = 8):
    """Synthesize (keypoints, mask) target frames by transforming the reference."""
    size = ref_mask.shape[1], ref_mask.shape[0]
    center = ref_kps.visible_points().mean(axis=0)
    poses = []
    for i in range(frames):
        scale, angle, shift = _DEMO_MOTION[i % len(_DEMO_MOTION)]
        transform = centered_transform(scale, angle, center, shift)
        poses.append(
            (transform_keypoints(ref_kps, transform), warp_mask(ref_mask, transform, size))
        )
    return poses


def keypoint_rows(kps: KeypointSet, confidence: float = 1.0) -> np.ndarray:
    """(17, 3) rows of x, y, confidence for document serialization."""
    conf = np.where(kps.visibility, float(confidence), 0.0)
    rows = np.zeros((NUM_SLOTS, 3), dtype=float)
    rows[:, :2] = np.where(kps.visibility[:, None], kps.points, 0.0)
    rows[:, 2] = conf
    return rows
