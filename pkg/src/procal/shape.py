"""2D shape primitives, the closed-form similarity solver, and shape metrics.

Conventions used throughout the package:

* Points are row vectors ``(x, y)`` in pixel units, with ``x`` growing to
  the right and ``y`` growing down (image convention).
* A similarity transform acts on row vectors from the right::

      y = s * (x @ r) + t

* ``rotation_matrix(theta)`` returns ``[[cos, sin], [-sin, cos]]``, so a
  positive angle turns the +x axis toward the +y axis.  With y growing
  down this reads as clockwise on screen; in the usual mathematical
  orientation (y up) it is counter-clockwise.

The 17 keypoint slots follow a fixed anatomical layout: face (nose, eyes,
ears), torso (shoulders, hips), arms (elbows, wrists), legs (knees,
ankles).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateShape,
    EmptyShape,
    FewerThanThreePoints,
    MissingAxisPoints,
)

NUM_SLOTS = 17

SLOT_NAMES = (
    "nose",
    "left_eye", "right_eye",
    "left_ear", "right_ear",
    "left_shoulder", "right_shoulder",
    "left_hip", "right_hip",
    "left_elbow", "right_elbow",
    "left_wrist", "right_wrist",
    "left_knee", "right_knee",
    "left_ankle", "right_ankle",
)

NOSE = 0
LEFT_HIP = 7
RIGHT_HIP = 8

FACE_SLOTS = (0, 1, 2, 3, 4)
TORSO_SLOTS = (5, 6, 7, 8)
ARM_SLOTS = (9, 10, 11, 12)
LEG_SLOTS = (13, 14, 15, 16)

GROUP_ORDER = ("face", "torso", "arms", "legs")
GROUP_SLOTS = {
    "face": FACE_SLOTS,
    "torso": TORSO_SLOTS,
    "arms": ARM_SLOTS,
    "legs": LEG_SLOTS,
}

# Centered sum of squares below this means the reference points are
# treated as coincident and the scale is undefined.
COINCIDENT_TOLERANCE = 1e-9

_ROTATION_TOLERANCE = 1e-9


def rotation_matrix(theta: float) -> np.ndarray:
    """2x2 rotation for row-vector right multiplication; see module docs."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, s], [-s, c]])


def wrap_angle(theta: float) -> float:
    """Wrap an angle in radians to the interval (-pi, pi]."""
    wrapped = math.fmod(theta + math.pi, 2.0 * math.pi)
    if wrapped < 0.0:
        wrapped += 2.0 * math.pi
    if wrapped == 0.0:
        return math.pi
    return wrapped - math.pi


@dataclass(frozen=True, eq=False)
class KeypointSet:
    """17 anatomical keypoints with per-slot visibility.

    ``points`` is a (17, 2) float array; ``visibility`` is a (17,) bool
    array.  Visible points must be finite; hidden slots may hold anything.
    """

    points: np.ndarray
    visibility: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        vis = np.array(self.visibility, dtype=bool)
        if pts.shape != (NUM_SLOTS, 2):
            raise ValueError(f"expected ({NUM_SLOTS}, 2) points, got {pts.shape}")
        if vis.shape != (NUM_SLOTS,):
            raise ValueError(f"expected ({NUM_SLOTS},) visibility, got {vis.shape}")
        if not np.all(np.isfinite(pts[vis])):
            raise ValueError("visible keypoints must be finite")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "visibility", vis)

    @classmethod
    def fully_visible(cls, points) -> "KeypointSet":
        return cls(points, np.ones(NUM_SLOTS, dtype=bool))

    def visible_slots(self) -> np.ndarray:
        return np.flatnonzero(self.visibility)

    def visible_points(self) -> np.ndarray:
        return self.points[self.visibility]

    def with_visibility(self, visibility) -> "KeypointSet":
        return KeypointSet(self.points, visibility)


@dataclass(frozen=True, eq=False)
class ProcrustesTransform:
    """Similarity transform: positive scale, proper 2x2 rotation, translation."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float)
        t = np.array(self.translation, dtype=float).reshape(2)
        s = float(self.scale)
        if r.shape != (2, 2):
            raise ValueError(f"rotation must be 2x2, got {r.shape}")
        if not (np.isfinite(s) and np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("transform parameters must be finite")
        if s <= 0.0:
            raise ValueError(f"scale must be positive, got {s}")
        if np.max(np.abs(r.T @ r - np.eye(2))) > _ROTATION_TOLERANCE:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > _ROTATION_TOLERANCE:
            raise ValueError("rotation must be proper (det +1, no reflection)")
        object.__setattr__(self, "scale", s)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "ProcrustesTransform":
        return cls(1.0, np.eye(2), np.zeros(2))

    @classmethod
    def from_parts(cls, scale: float, angle: float, translation=(0.0, 0.0)) -> "ProcrustesTransform":
        return cls(scale, rotation_matrix(angle), np.asarray(translation, dtype=float))

    @property
    def angle(self) -> float:
        """Rotation angle in (-pi, pi] under the module's sign convention."""
        return math.atan2(self.rotation[0, 1], self.rotation[0, 0])

    def apply(self, points) -> np.ndarray:
        return apply_transform(self, points)

    def inverse(self) -> "ProcrustesTransform":
        r_inv = self.rotation.T
        return ProcrustesTransform(
            1.0 / self.scale,
            r_inv,
            -(self.translation @ r_inv) / self.scale,
        )


@dataclass(frozen=True, eq=False)
class PairedPointSets:
    """Reference/target point rows paired by canonical slot.

    ``ref`` and ``tgt`` are (n, 2) arrays with n >= 3; ``slot_ids`` holds
    the strictly increasing canonical slot index of each row.
    """

    ref: np.ndarray
    tgt: np.ndarray
    slot_ids: np.ndarray

    def __post_init__(self):
        ref = np.array(self.ref, dtype=float)
        tgt = np.array(self.tgt, dtype=float)
        slots = np.array(self.slot_ids, dtype=int)
        if ref.ndim != 2 or ref.shape[1] != 2 or ref.shape != tgt.shape:
            raise ValueError(f"ref/tgt must share an (n, 2) shape, got {ref.shape} and {tgt.shape}")
        n = ref.shape[0]
        if n < 3:
            raise FewerThanThreePoints(f"need at least 3 paired points, got {n}")
        if slots.shape != (n,):
            raise ValueError("slot_ids length must match the point count")
        if n > 1 and not np.all(np.diff(slots) > 0):
            raise ValueError("slot_ids must be strictly increasing")
        if not (np.all(np.isfinite(ref)) and np.all(np.isfinite(tgt))):
            raise ValueError("paired points must be finite")
        object.__setattr__(self, "ref", ref)
        object.__setattr__(self, "tgt", tgt)
        object.__setattr__(self, "slot_ids", slots)

    def __len__(self) -> int:
        return self.ref.shape[0]

    def subset(self, slot_ids) -> "PairedPointSets":
        """Restrict the pairing to the given canonical slots (kept in order)."""
        keep = np.isin(self.slot_ids, np.asarray(list(slot_ids), dtype=int))
        return PairedPointSets(self.ref[keep], self.tgt[keep], self.slot_ids[keep])


def common_visible(ref: KeypointSet, tgt: KeypointSet) -> PairedPointSets:
    """Pair up the slots visible in both sets, in canonical slot order."""
    both = ref.visibility & tgt.visibility
    slots = np.flatnonzero(both)
    if slots.size < 3:
        raise FewerThanThreePoints(
            f"only {slots.size} slots are visible in both sets, need at least 3"
        )
    return PairedPointSets(ref.points[slots], tgt.points[slots], slots)


def solve_procrustes(pairs: PairedPointSets) -> ProcrustesTransform:
    """Closed-form least-squares similarity fit of ref onto tgt.

    Minimizes the Frobenius norm of ``s * ref @ r + t - tgt`` over positive
    scale, proper rotation, and translation.  The rotation comes from the
    SVD of the centered cross-covariance; if the unconstrained optimum is a
    reflection, the smallest singular direction is flipped to keep det +1.
    """
    x, y = pairs.ref, pairs.tgt
    mean_x = x.mean(axis=0)
    mean_y = y.mean(axis=0)
    xc = x - mean_x
    yc = y - mean_y

    spread = float(np.sum(xc * xc))
    if spread < COINCIDENT_TOLERANCE:
        raise DegenerateShape("reference points are coincident; scale is undefined")

    u, sig, vt = np.linalg.svd(xc.T @ yc)
    flip = 1.0 if np.linalg.det(u) * np.linalg.det(vt) > 0.0 else -1.0
    signs = np.array([1.0, flip])
    r = (u * signs) @ vt
    s = float((sig * signs).sum() / spread)
    if s <= 0.0:
        raise DegenerateShape("target configuration collapses the scale to zero")
    t = mean_y - s * (mean_x @ r)
    return ProcrustesTransform(s, r, t)


def apply_transform(transform: ProcrustesTransform, points) -> np.ndarray:
    """Apply ``s * points @ r + t`` row-wise."""
    pts = np.asarray(points, dtype=float)
    return transform.scale * (pts @ transform.rotation) + transform.translation


def residual(transform: ProcrustesTransform, pairs: PairedPointSets) -> float:
    """Frobenius norm of the fit error on the paired points."""
    return float(np.linalg.norm(apply_transform(transform, pairs.ref) - pairs.tgt))


def transform_keypoints(kps: KeypointSet, transform: ProcrustesTransform) -> KeypointSet:
    """Map every keypoint through the transform, preserving visibility."""
    return KeypointSet(apply_transform(transform, kps.points), kps.visibility)


def _torso_axis(kps: KeypointSet) -> np.ndarray:
    needed = (NOSE, LEFT_HIP, RIGHT_HIP)
    if not all(kps.visibility[i] for i in needed):
        missing = [SLOT_NAMES[i] for i in needed if not kps.visibility[i]]
        raise MissingAxisPoints(f"torso axis needs nose and both hips; missing {missing}")
    pelvis = 0.5 * (kps.points[LEFT_HIP] + kps.points[RIGHT_HIP])
    axis = kps.points[NOSE] - pelvis
    if np.all(axis == 0.0):
        raise MissingAxisPoints("nose coincides with the pelvis; torso axis undefined")
    return axis


def torso_axis_angle(ref: KeypointSet, tgt: KeypointSet) -> float:
    """Signed angle between the pelvis-to-nose axes, wrapped to (-pi, pi].

    The pelvis is the midpoint of the two hips.  Positive follows the
    module rotation convention (x toward y).
    """
    ref_axis = _torso_axis(ref)
    tgt_axis = _torso_axis(tgt)
    ref_angle = math.atan2(ref_axis[1], ref_axis[0])
    tgt_angle = math.atan2(tgt_axis[1], tgt_axis[0])
    return wrap_angle(tgt_angle - ref_angle)


def visible_bbox(kps: KeypointSet) -> np.ndarray:
    """Axis-aligned box (xmin, ymin, xmax, ymax) over visible points."""
    pts = kps.visible_points()
    if pts.shape[0] == 0:
        raise EmptyShape("keypoint set has no visible points")
    return np.array([pts[:, 0].min(), pts[:, 1].min(), pts[:, 0].max(), pts[:, 1].max()])


def bbox_iou(ref: KeypointSet, tgt: KeypointSet) -> float:
    """IoU of the axis-aligned bounding boxes of the visible points."""
    a = visible_bbox(ref)
    b = visible_bbox(tgt)
    if np.array_equal(a, b):
        return 1.0
    inter_w = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    inter_h = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = inter_w * inter_h
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    if union <= 0.0:
        return 0.0
    return float(inter / union)
