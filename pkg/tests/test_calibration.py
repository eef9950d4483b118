import math

import numpy as np
import pytest

from procal import (
    DimensionMismatch,
    FewerThanThreePoints,
    FrameError,
    KeypointSet,
    NoFeasibleCandidate,
    ProcrustesTransform,
    TORSO_SLOTS,
    calibrate_sequence,
    common_visible,
    enumerate_candidates,
    ensure_alpha,
    keypoint_hull_mask,
    mask_iou,
    select_subset,
    solve_procrustes,
    transform_keypoints,
    warp_image,
    warp_mask,
)
from procal.calibration import _candidate_rank
from procal.fixtures import centered_transform, person_keypoints, synthetic_person
from procal.shape import GROUP_ORDER, GROUP_SLOTS


def bilinear_oracle(src, transform, out_size):
    """Per-pixel reference warp: inverse map + hand-rolled bilinear weights."""
    width, height = out_size
    inv = transform.inverse()
    channels = src.shape[2]
    out = np.zeros((height, width, channels), dtype=np.uint8)
    for oy in range(height):
        for ox in range(width):
            sx, sy = inv.apply([[float(ox), float(oy)]])[0]
            x0, y0 = math.floor(sx), math.floor(sy)
            fx, fy = sx - x0, sy - y0
            acc = np.zeros(channels)
            for dy, wy in ((0, 1.0 - fy), (1, fy)):
                for dx, wx in ((0, 1.0 - fx), (1, fx)):
                    xi, yi = x0 + dx, y0 + dy
                    if 0 <= xi < src.shape[1] and 0 <= yi < src.shape[0]:
                        acc += wx * wy * src[yi, xi]
            out[oy, ox] = np.rint(acc).clip(0, 255)
    return out


class TestWarpImage:
    def test_identity_bit_exact(self, person256):
        img, _, _ = person256
        out = warp_image(img, ProcrustesTransform.identity(), (256, 256))
        np.testing.assert_array_equal(out, img)

    def test_integer_translation_bit_exact(self, person256):
        img, _, _ = person256
        t = ProcrustesTransform.from_parts(1.0, 0.0, (10.0, 0.0))
        out = warp_image(img, t, (256, 256))
        np.testing.assert_array_equal(out[:, 10:], img[:, :-10])
        assert int(out[:, :10].sum()) == 0

    def test_scale_up_matches_oracle(self):
        checker = np.zeros((2, 2, 3), dtype=np.uint8)
        checker[0, 0] = checker[1, 1] = 255
        t = ProcrustesTransform(2.0, np.eye(2), np.zeros(2))
        out = warp_image(checker, t, (4, 4))
        np.testing.assert_array_equal(out, bilinear_oracle(checker, t, (4, 4)))

    def test_general_transform_matches_oracle(self):
        rng = np.random.default_rng(5)
        src = rng.integers(0, 256, size=(12, 10, 4), dtype=np.uint8)
        t = ProcrustesTransform.from_parts(1.4, 0.5, (3.2, -1.7))
        out = warp_image(src, t, (16, 14))
        np.testing.assert_array_equal(out, bilinear_oracle(src, t, (16, 14)))

    def test_channel_count_preserved(self, person256):
        img, _, _ = person256
        t = ProcrustesTransform.from_parts(0.9, 0.1, (2.0, 2.0))
        assert warp_image(img, t, (64, 64)).shape == (64, 64, 3)
        assert warp_image(ensure_alpha(img), t, (64, 64)).shape == (64, 64, 4)

    def test_round_trip_interior(self):
        # Smooth ramps plus a gentle sinusoid: double bilinear resampling
        # then stays within quantization error.
        ys, xs = np.mgrid[0:256, 0:256].astype(float)
        img = np.stack(
            [
                10.0 + 0.55 * xs + 0.2 * ys,
                5.0 + 0.15 * xs + 0.6 * ys,
                60.0 + 0.2 * xs + 0.2 * ys + 8.0 * np.sin(2 * np.pi * xs / 64.0),
            ],
            axis=2,
        )
        src = ensure_alpha(np.rint(img).clip(0, 255).astype(np.uint8))
        t = ProcrustesTransform.from_parts(1.3, 0.35, (7.5, -3.25))
        there = warp_image(src, t, (256, 256))
        back = warp_image(there, t.inverse(), (256, 256))
        interior = back[..., 3] == 255
        # Drop a 2-pixel band around any non-opaque pixel.
        for _ in range(2):
            shrunk = interior.copy()
            shrunk[1:] &= interior[:-1]
            shrunk[:-1] &= interior[1:]
            shrunk[:, 1:] &= interior[:, :-1]
            shrunk[:, :-1] &= interior[:, 1:]
            interior = shrunk
        assert interior.sum() > 1000
        diff = np.abs(back[..., :3].astype(int) - src[..., :3].astype(int))
        assert diff[interior].max() <= 2


class TestWarpMask:
    def test_identity(self, person256):
        _, _, mask = person256
        np.testing.assert_array_equal(
            warp_mask(mask, ProcrustesTransform.identity(), (256, 256)), mask
        )

    def test_shift_out_of_frame(self):
        mask = np.zeros((8, 8), dtype=bool)
        mask[2:6, 2:6] = True
        t = ProcrustesTransform.from_parts(1.0, 0.0, (4.0, 0.0))
        out = warp_mask(mask, t, (8, 8))
        assert out[2:6, 6:8].all()
        assert not out[:, :6][:, :4].any()


class TestMaskIou:
    def test_identical(self, person256):
        _, _, mask = person256
        assert mask_iou(mask, mask) == 1.0

    def test_disjoint(self):
        a = np.zeros((4, 4), dtype=bool)
        b = np.zeros((4, 4), dtype=bool)
        a[0, 0] = b[3, 3] = True
        assert mask_iou(a, b) == 0.0

    def test_half_overlap(self):
        full = np.ones((10, 10), dtype=bool)
        half = np.zeros((10, 10), dtype=bool)
        half[:, :5] = True
        assert mask_iou(full, half) == 0.5

    def test_empty_union(self):
        empty = np.zeros((4, 4), dtype=bool)
        assert mask_iou(empty, empty) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            mask_iou(np.zeros((4, 4), dtype=bool), np.zeros((4, 5), dtype=bool))


def right_triangle_keypoints(legs=10.0):
    pts = np.zeros((17, 2))
    pts[0] = (0.0, 0.0)
    pts[1] = (legs, 0.0)
    pts[2] = (0.0, legs)
    vis = np.zeros(17, dtype=bool)
    vis[:3] = True
    return KeypointSet(pts, vis)


class TestKeypointHullMask:
    def test_triangle_matches_point_in_triangle_oracle(self):
        kps = right_triangle_keypoints(10.0)
        mask = keypoint_hull_mask(kps, (16, 16))
        a, b, c = kps.points[0], kps.points[1], kps.points[2]
        oracle = np.zeros((16, 16), dtype=bool)
        def cross2(u, v):
            return u[0] * v[1] - u[1] * v[0]

        for y in range(16):
            for x in range(16):
                p = np.array([x, y], dtype=float)
                d1 = cross2(b - a, p - a)
                d2 = cross2(c - b, p - b)
                d3 = cross2(a - c, p - c)
                same_side = (d1 >= -1e-9 and d2 >= -1e-9 and d3 >= -1e-9) or (
                    d1 <= 1e-9 and d2 <= 1e-9 and d3 <= 1e-9
                )
                oracle[y, x] = same_side
        np.testing.assert_array_equal(mask, oracle)
        perimeter = 10.0 + 10.0 + 10.0 * math.sqrt(2.0)
        assert abs(int(mask.sum()) - 50.0) <= perimeter

    def test_collinear_points_give_line(self):
        pts = np.zeros((17, 2))
        pts[:, 0] = np.arange(17, dtype=float)
        pts[:, 1] = 5.0
        mask = keypoint_hull_mask(KeypointSet.fully_visible(pts), (20, 12))
        assert mask[5, 0:17].all()
        assert int(mask.sum()) == mask[5].sum()  # one pixel wide

    def test_no_visible_points(self):
        kps = person_keypoints().with_visibility(np.zeros(17, dtype=bool))
        with pytest.raises(FewerThanThreePoints):
            keypoint_hull_mask(kps, (16, 16))

    def test_out_of_canvas_points_clipped(self):
        kps = right_triangle_keypoints(40.0)
        mask = keypoint_hull_mask(kps, (8, 8))
        assert mask.shape == (8, 8)
        assert mask.any()


def selection_oracle(ref_kps, tgt_kps, ref_mask, tgt_mask):
    """Exhaustive enumeration of the 8 group unions, scored independently."""
    pairs = common_visible(ref_kps, tgt_kps)
    common = set(pairs.slot_ids.tolist())
    out_size = (tgt_mask.shape[1], tgt_mask.shape[0])
    best = None
    for bits in range(8):
        names = ["torso"]
        if bits & 4:
            names.append("face")
        if bits & 2:
            names.append("arms")
        if bits & 1:
            names.append("legs")
        groups = tuple(g for g in GROUP_ORDER if g in names)
        contributions = [[s for s in GROUP_SLOTS[g] if s in common] for g in groups]
        if any(len(c) == 0 for c in contributions):
            continue
        slots = sorted(s for c in contributions for s in c)
        if len(slots) < 3:
            continue
        transform = solve_procrustes(pairs.subset(slots))
        score = mask_iou(warp_mask(ref_mask, transform, out_size), tgt_mask)
        bitkey = tuple(int(g in groups) for g in ("face", "arms", "legs"))
        key = (score, len(slots)) + bitkey
        if best is None or key > best[0]:
            best = (key, "+".join(groups), score)
    if best is None:
        raise NoFeasibleCandidate("oracle found no candidate")
    return best[1], best[2]


class TestSelectSubset:
    def test_identical_pose_prefers_full_set(self, person256):
        img, kps, mask = person256
        frame = select_subset(kps, kps, img, mask, mask)
        assert frame.chosen_subset.name == "face+torso+arms+legs"
        assert frame.score == 1.0
        assert len(frame.candidate_scores) == 8
        assert all(s == 1.0 for s in frame.candidate_scores.values())

    def test_raised_arms_exclude_arm_candidates(self, person256):
        img, kps, mask = person256
        center = kps.visible_points().mean(axis=0)
        global_t = centered_transform(2.0, 0.0, center)
        tgt_pts = global_t.apply(kps.points)
        # Swing both arms up 90 degrees about their shoulders.
        for shoulder, elbow, wrist in ((5, 9, 11), (6, 10, 12)):
            pivot = tgt_pts[shoulder]
            spin = ProcrustesTransform.from_parts(1.0, -math.pi / 2.0)
            for j in (elbow, wrist):
                tgt_pts[j] = pivot + spin.apply((tgt_pts[j] - pivot)[None, :])[0]
        tgt = KeypointSet.fully_visible(tgt_pts)
        tgt_mask = warp_mask(mask, global_t, (512, 512))
        big_img = np.zeros((512, 512, 3), dtype=np.uint8)

        frame = select_subset(kps, tgt, img, mask, tgt_mask)
        name, score = selection_oracle(kps, tgt, mask, tgt_mask)
        assert frame.chosen_subset.name == name
        assert frame.score == score
        assert "arms" not in frame.chosen_subset.name
        arm_scores = [s for n, s in frame.candidate_scores.items() if "arms" in n]
        assert max(arm_scores) < frame.score

    def test_only_torso_visible(self, person256):
        img, kps, mask = person256
        vis = np.zeros(17, dtype=bool)
        vis[list(TORSO_SLOTS)] = True
        tgt = kps.with_visibility(vis)
        frame = select_subset(kps, tgt, img, mask, mask)
        assert frame.chosen_subset.name == "torso"
        assert list(frame.candidate_scores) == ["torso"]

    def test_no_torso_slots_is_infeasible(self, person256):
        img, kps, mask = person256
        vis = np.ones(17, dtype=bool)
        vis[list(TORSO_SLOTS)] = False
        with pytest.raises(NoFeasibleCandidate):
            select_subset(kps, kps.with_visibility(vis), img, mask, mask)

    def test_degenerate_candidates_are_skipped(self, person256):
        img, _, mask = person256
        pts = np.full((17, 2), 50.0)
        vis = np.zeros(17, dtype=bool)
        vis[[5, 6, 7]] = True
        ref = KeypointSet(pts, vis)
        tgt = KeypointSet(np.arange(34, dtype=float).reshape(17, 2), vis)
        with pytest.raises(NoFeasibleCandidate):
            select_subset(ref, tgt, img, mask, mask)

    def test_deterministic(self, person256):
        img, kps, mask = person256
        t = centered_transform(0.8, 0.3, kps.visible_points().mean(axis=0))
        tgt = transform_keypoints(kps, t)
        tgt_mask = warp_mask(mask, t, (256, 256))
        a = select_subset(kps, tgt, img, mask, tgt_mask)
        b = select_subset(kps, tgt, img, mask, tgt_mask)
        np.testing.assert_array_equal(a.image, b.image)
        assert a.candidate_scores == b.candidate_scores
        assert a.chosen_subset == b.chosen_subset

    def test_candidate_rank_tiebreak(self):
        cands = enumerate_candidates(range(17))
        ranked = sorted(cands, key=_candidate_rank)
        assert ranked[-1].name == "face+torso+arms+legs"
        assert len(cands) == 8


class TestCalibrationImproves:
    @pytest.mark.parametrize("scale,angle", [(0.7, 0.0), (1.4, 0.0), (1.0, 1.0), (0.8, -2.2)])
    def test_synthetic_transform_restored(self, person256, scale, angle):
        img, kps, mask = person256
        t = centered_transform(scale, angle, kps.visible_points().mean(axis=0))
        tgt = transform_keypoints(kps, t)
        tgt_mask = warp_mask(mask, t, (256, 256))
        pre = mask_iou(mask, tgt_mask)
        frame = select_subset(kps, tgt, img, mask, tgt_mask)
        assert frame.score >= 0.98
        assert frame.score >= pre


class TestCalibrateSequence:
    def test_single_identity_frame(self, person256):
        img, kps, mask = person256
        frames = calibrate_sequence(img, kps, mask, [(kps, mask)])
        assert len(frames) == 1
        assert frames[0].frame_index == 1
        assert frames[0].score == 1.0
        # Background is screened: everything outside the silhouette is clear.
        out = frames[0].image
        assert out.shape == (256, 256, 4)
        assert not out[~mask].any()
        np.testing.assert_array_equal(out[mask][:, :3], img[mask])

    def test_error_names_failing_frame(self, person256):
        img, kps, mask = person256
        no_torso = np.ones(17, dtype=bool)
        no_torso[list(TORSO_SLOTS)] = False
        poses = [(kps, mask), (kps.with_visibility(no_torso), mask), (kps, mask)]
        with pytest.raises(FrameError) as info:
            calibrate_sequence(img, kps, mask, poses)
        assert info.value.frame_index == 2
        assert "frame 2" in str(info.value)

    def test_scale_sweep_recovers_parameters(self, person256):
        img, kps, mask = person256
        center = kps.visible_points().mean(axis=0)
        poses = []
        for scale in (1.0, 0.5):
            t = centered_transform(scale, 0.0, center)
            poses.append((transform_keypoints(kps, t), warp_mask(mask, t, (256, 256))))
        frames = calibrate_sequence(img, kps, mask, poses)
        assert abs(frames[0].transform.scale - 1.0) < 1e-6
        assert abs(frames[1].transform.scale - 0.5) < 1e-6

    def test_parallel_matches_serial(self, person256):
        img, kps, mask = person256
        poses = []
        center = kps.visible_points().mean(axis=0)
        for angle in (0.0, 0.4, -0.9, 1.6):
            t = centered_transform(1.0, angle, center)
            poses.append((transform_keypoints(kps, t), warp_mask(mask, t, (256, 256))))
        serial = calibrate_sequence(img, kps, mask, poses, workers=1)
        parallel = calibrate_sequence(img, kps, mask, poses, workers=4)
        for a, b in zip(serial, parallel):
            np.testing.assert_array_equal(a.image, b.image)
            assert a.candidate_scores == b.candidate_scores

    def test_inconsistent_mask_dims_rejected(self, person256):
        img, kps, mask = person256
        small = np.zeros((64, 64), dtype=bool)
        with pytest.raises(DimensionMismatch):
            calibrate_sequence(img, kps, mask, [(kps, mask), (kps, small)])
