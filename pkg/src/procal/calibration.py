"""Per-frame calibration of a reference image against target poses.

Images are ``uint8`` arrays of shape ``(height, width, channels)`` with 3
(RGB) or 4 (RGBA) channels.  Masks are boolean arrays of shape
``(height, width)``.  Warping uses inverse mapping with bilinear sampling;
locations that map outside the source are zero-filled (transparent when an
alpha channel is present).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateShape,
    DimensionMismatch,
    FewerThanThreePoints,
    FrameError,
    NoFeasibleCandidate,
)
from .shape import (
    GROUP_ORDER,
    GROUP_SLOTS,
    KeypointSet,
    ProcrustesTransform,
    common_visible,
    solve_procrustes,
)

_HULL_EPS = 1e-9


def _check_image(image: np.ndarray, name: str = "image") -> np.ndarray:
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] not in (3, 4):
        raise ValueError(f"{name} must be (h, w, 3|4), got {img.shape}")
    if img.dtype != np.uint8:
        raise ValueError(f"{name} must be uint8, got {img.dtype}")
    return img


def _check_mask(mask: np.ndarray, name: str = "mask") -> np.ndarray:
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ValueError(f"{name} must be a 2D raster, got shape {m.shape}")
    if m.dtype != bool:
        raise ValueError(f"{name} must be boolean, got {m.dtype}")
    return m


def ensure_alpha(image: np.ndarray) -> np.ndarray:
    """Return an RGBA copy, adding a fully opaque alpha channel if missing."""
    img = _check_image(image)
    if img.shape[2] == 4:
        return img.copy()
    alpha = np.full(img.shape[:2] + (1,), 255, dtype=np.uint8)
    return np.concatenate([img, alpha], axis=2)


def _sample_bilinear(src: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear sample of float planes at (xs, ys); zero outside the frame."""
    h, w = src.shape[:2]
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    fx = xs - x0
    fy = ys - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)

    out = np.zeros(xs.shape + (src.shape[2],), dtype=np.float64)
    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            weight = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy)
            inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            if not inside.any():
                continue
            vals = src[yi.clip(0, h - 1), xi.clip(0, w - 1)]
            out += (weight * inside)[..., None] * vals
    return out


def _inverse_grid(transform: ProcrustesTransform, out_size) -> tuple[np.ndarray, np.ndarray]:
    width, height = int(out_size[0]), int(out_size[1])
    if width <= 0 or height <= 0:
        raise ValueError(f"output dimensions must be positive, got {out_size}")
    inv = transform.inverse()
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    r = inv.rotation
    sx = inv.scale * (xs * r[0, 0] + ys * r[1, 0]) + inv.translation[0]
    sy = inv.scale * (xs * r[0, 1] + ys * r[1, 1]) + inv.translation[1]
    return sx, sy


def warp_image(src: np.ndarray, transform: ProcrustesTransform, out_size) -> np.ndarray:
    """Warp ``src`` so that source point p lands at ``transform.apply(p)``.

    ``out_size`` is (width, height).  Each output pixel is sampled from the
    inverse-mapped source location by bilinear interpolation.  The channel
    count is preserved; out-of-frame samples are zero (transparent for
    RGBA sources).
    """
    img = _check_image(src, "src")
    sx, sy = _inverse_grid(transform, out_size)
    sampled = _sample_bilinear(img.astype(np.float64), sx, sy)
    return np.rint(sampled).clip(0, 255).astype(np.uint8)


def warp_mask(mask: np.ndarray, transform: ProcrustesTransform, out_size) -> np.ndarray:
    """Warp a boolean mask through the same mapping as :func:`warp_image`."""
    m = _check_mask(mask)
    sx, sy = _inverse_grid(transform, out_size)
    sampled = _sample_bilinear(m.astype(np.float64)[..., None], sx, sy)
    return sampled[..., 0] >= 0.5


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Pixel-wise IoU of two binary masks; 0.0 when the union is empty."""
    ma = _check_mask(a, "a")
    mb = _check_mask(b, "b")
    if ma.shape != mb.shape:
        raise DimensionMismatch(f"mask shapes differ: {ma.shape} vs {mb.shape}")
    union = int(np.logical_or(ma, mb).sum())
    if union == 0:
        return 0.0
    inter = int(np.logical_and(ma, mb).sum())
    return inter / union


def _convex_hull(points: np.ndarray) -> np.ndarray:
    """Monotone-chain convex hull; vertices in counter-clockwise order."""
    pts = np.unique(points, axis=0)
    if pts.shape[0] <= 2:
        return pts
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list[np.ndarray] = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[np.ndarray] = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def _segment_mask(a: np.ndarray, b: np.ndarray, width: int, height: int) -> np.ndarray:
    """Pixels whose centers lie within half a pixel of segment ab."""
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        dist2 = (xs - a[0]) ** 2 + (ys - a[1]) ** 2
    else:
        t = (((xs - a[0]) * ab[0]) + ((ys - a[1]) * ab[1])) / denom
        t = np.clip(t, 0.0, 1.0)
        dist2 = (xs - (a[0] + t * ab[0])) ** 2 + (ys - (a[1] + t * ab[1])) ** 2
    return dist2 <= 0.25


def keypoint_hull_mask(kps: KeypointSet, dims) -> np.ndarray:
    """Filled convex hull of the visible keypoints, rasterized on (width, height).

    Collinear points degrade to a one-pixel-wide line mask instead of an
    error; parts of the hull outside the canvas are clipped.
    """
    width, height = int(dims[0]), int(dims[1])
    if width <= 0 or height <= 0:
        raise ValueError(f"dimensions must be positive, got {dims}")
    pts = kps.visible_points()
    if pts.shape[0] < 3:
        raise FewerThanThreePoints(
            f"hull needs at least 3 visible points, got {pts.shape[0]}"
        )
    hull = _convex_hull(pts)
    if hull.shape[0] < 3:
        lo = pts[np.lexsort((pts[:, 1], pts[:, 0]))[0]]
        hi = pts[np.lexsort((pts[:, 1], pts[:, 0]))[-1]]
        return _segment_mask(lo, hi, width, height)

    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    inside = np.ones((height, width), dtype=bool)
    for i in range(hull.shape[0]):
        x1, y1 = hull[i]
        x2, y2 = hull[(i + 1) % hull.shape[0]]
        inside &= (x2 - x1) * (ys - y1) - (y2 - y1) * (xs - x1) >= -_HULL_EPS
    return inside


@dataclass(frozen=True)
class SubsetCandidate:
    """A union of anatomical groups (torso always present) and its slots."""

    groups: tuple[str, ...]
    slots: tuple[int, ...]

    @property
    def name(self) -> str:
        return "+".join(self.groups)


@dataclass(frozen=True, eq=False)
class CalibratedFrame:
    """Warped reference image plus the transform and score that produced it."""

    frame_index: int
    image: np.ndarray
    transform: ProcrustesTransform
    chosen_subset: SubsetCandidate
    score: float
    candidate_scores: dict[str, float]


def enumerate_candidates(common_slots) -> list[SubsetCandidate]:
    """All group unions with torso mandatory, restricted to common slots.

    A candidate is feasible only if every group it names contributes at
    least one commonly visible slot (so a frame with no visible torso has
    no candidates, and unions that merely duplicate a smaller candidate's
    slots are dropped) and at least 3 slots remain in total.
    """
    common = set(int(s) for s in common_slots)
    out = []
    for face in (0, 1):
        for arms in (0, 1):
            for legs in (0, 1):
                chosen = ["torso"]
                if face:
                    chosen.append("face")
                if arms:
                    chosen.append("arms")
                if legs:
                    chosen.append("legs")
                groups = tuple(g for g in GROUP_ORDER if g in chosen)
                per_group = [
                    [s for s in GROUP_SLOTS[g] if s in common] for g in groups
                ]
                if any(not slots for slots in per_group):
                    continue
                slots = tuple(sorted(s for group in per_group for s in group))
                if len(slots) >= 3:
                    out.append(SubsetCandidate(groups, slots))
    return out


def _candidate_rank(candidate: SubsetCandidate) -> tuple[int, int, int, int]:
    bits = tuple(int(g in candidate.groups) for g in ("face", "arms", "legs"))
    return (len(candidate.slots),) + bits


def select_subset(
    ref_kps: KeypointSet,
    tgt_kps: KeypointSet,
    ref_img: np.ndarray,
    ref_mask: np.ndarray,
    tgt_mask: np.ndarray,
    frame_index: int = 0,
) -> CalibratedFrame:
    """Calibrate one frame with the best-scoring keypoint subset.

    Every feasible group-union candidate gets its own similarity fit; each
    fit warps the reference silhouette and is scored by pixel IoU against
    the target silhouette.  The argmax candidate wins; ties prefer more
    slots, then face, arms, legs inclusion, in that order.  The returned
    image is the reference warped by the winning transform with the
    background screened out (transparent outside the warped silhouette).
    """
    img = _check_image(ref_img, "ref_img")
    rmask = _check_mask(ref_mask, "ref_mask")
    tmask = _check_mask(tgt_mask, "tgt_mask")
    if rmask.shape != img.shape[:2]:
        raise DimensionMismatch(
            f"ref_mask {rmask.shape} does not match ref_img {img.shape[:2]}"
        )
    out_size = (tmask.shape[1], tmask.shape[0])

    pairs = common_visible(ref_kps, tgt_kps)
    candidates = enumerate_candidates(pairs.slot_ids)

    scored: list[tuple[SubsetCandidate, ProcrustesTransform, float]] = []
    scores: dict[str, float] = {}
    for cand in candidates:
        sub = pairs.subset(cand.slots)
        try:
            transform = solve_procrustes(sub)
        except DegenerateShape:
            # Coincident reference points in this subset: no usable fit.
            continue
        score = mask_iou(warp_mask(rmask, transform, out_size), tmask)
        scored.append((cand, transform, score))
        scores[cand.name] = score
    if not scored:
        raise NoFeasibleCandidate(
            "no keypoint subset with at least 3 commonly visible points"
        )

    best_cand, best_transform, best_score = max(
        scored, key=lambda item: (item[2],) + _candidate_rank(item[0])
    )

    warped = warp_image(ensure_alpha(img), best_transform, out_size)
    silhouette = warp_mask(rmask, best_transform, out_size)
    warped[~silhouette] = 0
    return CalibratedFrame(
        frame_index=frame_index,
        image=warped,
        transform=best_transform,
        chosen_subset=best_cand,
        score=best_score,
        candidate_scores=scores,
    )


def calibrate_sequence(
    ref_img: np.ndarray,
    ref_kps: KeypointSet,
    ref_mask: np.ndarray,
    poses,
    workers: int = 1,
) -> list[CalibratedFrame]:
    """Calibrate the reference against every (keypoints, mask) pose frame.

    Frames are independent and may be processed in parallel; results come
    back in frame order.  Frame indices are 1-based.  The first failing
    frame aborts the sequence with the frame index attached.
    """
    img = _check_image(ref_img, "ref_img")
    rmask = _check_mask(ref_mask, "ref_mask")
    poses = list(poses)
    shapes = {np.asarray(m).shape for _, m in poses}
    if len(shapes) > 1:
        raise DimensionMismatch(f"pose masks disagree on dimensions: {sorted(shapes)}")

    def one(item):
        index, (kps, mask) = item
        try:
            return select_subset(ref_kps, kps, img, rmask, mask, frame_index=index)
        except FrameError:
            raise
        except Exception as exc:
            raise FrameError(index, exc) from exc

    numbered = list(enumerate(poses, start=1))
    if workers > 1 and len(numbered) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, numbered))
    return [one(item) for item in numbered]
