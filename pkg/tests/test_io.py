import json

import numpy as np
import pytest

from procal import ParseError, PipelineConfig, SchemaError
from procal import io
from procal.fixtures import keypoint_rows, person_keypoints, synthetic_person
from procal.propagation import run_propagation


def awkward_rows():
    """Keypoint rows with floats that stress decimal serialization."""
    rows = keypoint_rows(person_keypoints())
    rows[0, 0] = 0.1 + 0.2
    rows[1, 1] = 1.0 / 3.0
    rows[2, 0] = 2.0**-40
    rows[3, 2] = 0.30000000000000004
    return rows


class TestKeypointDocuments:
    def test_round_trip_bit_exact(self, tmp_path):
        doc = io.KeypointDocument(640, 480, "unit-test", [awkward_rows(), keypoint_rows(person_keypoints())])
        path = tmp_path / "kp.json"
        io.save_keypoint_document(doc, path)
        loaded = io.load_keypoint_document(path)
        assert loaded.width == 640 and loaded.height == 480
        assert loaded.source == "unit-test"
        assert len(loaded.frames) == 2
        for a, b in zip(doc.frames, loaded.frames):
            np.testing.assert_array_equal(np.asarray(a), b)

    def test_full_confidence_gives_full_visibility(self, tmp_path):
        doc = io.KeypointDocument(64, 64, "t", [keypoint_rows(person_keypoints(), confidence=1.0)])
        path = tmp_path / "kp.json"
        io.save_keypoint_document(doc, path)
        sets = io.load_keypoints(path)
        assert len(sets) == 1
        assert sets[0].visibility.all()

    def test_zero_confidence_arms_hidden(self, tmp_path):
        rows = keypoint_rows(person_keypoints(), confidence=1.0)
        rows[9:13, 2] = 0.0
        io.save_keypoint_document(io.KeypointDocument(64, 64, "t", [rows]), tmp_path / "kp.json")
        kps = io.load_keypoints(tmp_path / "kp.json", visibility_threshold=0.3)[0]
        assert not kps.visibility[9:13].any()
        assert kps.visibility[[0, 5, 13]].all()
        # Coordinates survive exactly even for hidden slots.
        np.testing.assert_array_equal(kps.points, rows[:, :2])

    def test_threshold_is_inclusive(self, tmp_path):
        rows = keypoint_rows(person_keypoints(), confidence=0.3)
        io.save_keypoint_document(io.KeypointDocument(64, 64, "t", [rows]), tmp_path / "kp.json")
        kps = io.load_keypoints(tmp_path / "kp.json", visibility_threshold=0.3)[0]
        assert kps.visibility.all()

    def test_wrong_slot_count_names_frame(self, tmp_path):
        path = tmp_path / "bad.json"
        obj = {
            "format": io.KEYPOINT_FORMAT,
            "width": 64,
            "height": 64,
            "source": "t",
            "frames": [
                {"index": 1, "keypoints": keypoint_rows(person_keypoints()).tolist()},
                {"index": 2, "keypoints": keypoint_rows(person_keypoints()).tolist()[:16]},
            ],
        }
        path.write_text(json.dumps(obj))
        with pytest.raises(SchemaError, match="frame 2"):
            io.load_keypoint_document(path)

    def test_noncontiguous_indices_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        obj = {
            "format": io.KEYPOINT_FORMAT,
            "width": 64,
            "height": 64,
            "frames": [{"index": 2, "keypoints": keypoint_rows(person_keypoints()).tolist()}],
        }
        path.write_text(json.dumps(obj))
        with pytest.raises(SchemaError, match="contiguous"):
            io.load_keypoint_document(path)

    def test_confidence_out_of_range_rejected(self, tmp_path):
        rows = keypoint_rows(person_keypoints()).tolist()
        rows[4][2] = 1.5
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({
            "format": io.KEYPOINT_FORMAT, "width": 8, "height": 8,
            "frames": [{"index": 1, "keypoints": rows}],
        }))
        with pytest.raises(SchemaError, match="confidence"):
            io.load_keypoint_document(path)

    def test_parse_error_reports_line(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{\n "format": "keypoints/1",\n broken\n}')
        with pytest.raises(ParseError, match="line 3"):
            io.load_keypoint_document(path)

    def test_wrong_format_tag(self, tmp_path):
        path = tmp_path / "other.json"
        path.write_text(json.dumps({"format": "something/9", "frames": []}))
        with pytest.raises(SchemaError, match="format"):
            io.load_keypoint_document(path)


class TestScheduleFiles:
    def test_round_trip(self, tmp_path):
        feats = np.random.default_rng(1).normal(size=(10, 2, 2))
        _, schedule = run_propagation(feats, 4, 5, seed=77)
        path = tmp_path / "schedule.json"
        io.save_schedule(schedule, path)
        loaded = io.load_schedule(path)
        assert loaded == schedule
        # Saving the loaded schedule reproduces the file byte for byte.
        io.save_schedule(loaded, tmp_path / "again.json")
        assert (tmp_path / "again.json").read_bytes() == path.read_bytes()

    def test_file_carries_partition_and_steps(self, tmp_path):
        feats = np.zeros((7, 1, 1)) + np.arange(7).reshape(7, 1, 1)
        _, schedule = run_propagation(feats, 3, 2, seed=0)
        io.save_schedule(schedule, tmp_path / "s.json")
        obj = json.loads((tmp_path / "s.json").read_text())
        assert obj["group_sizes"] == [2, 2, 3]
        assert obj["step_numbers"] == [2, 1]

    def test_malformed_schedule(self, tmp_path):
        path = tmp_path / "s.json"
        path.write_text(json.dumps({"format": io.SCHEDULE_FORMAT, "length": 4}))
        with pytest.raises(SchemaError):
            io.load_schedule(path)


class TestRasterFiles:
    def test_image_round_trip(self, tmp_path):
        img, _, _ = synthetic_person(64, height=28.0)
        io.save_image(img, tmp_path / "img.png")
        np.testing.assert_array_equal(io.load_image(tmp_path / "img.png"), img)

    def test_rgba_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        img = rng.integers(0, 256, size=(16, 16, 4), dtype=np.uint8)
        io.save_image(img, tmp_path / "img.png")
        np.testing.assert_array_equal(io.load_image(tmp_path / "img.png"), img)

    def test_mask_round_trip(self, tmp_path):
        _, _, mask = synthetic_person(64, height=28.0)
        io.save_mask(mask, tmp_path / "mask.png")
        np.testing.assert_array_equal(io.load_mask(tmp_path / "mask.png"), mask)

    def test_features_round_trip(self, tmp_path):
        feats = np.random.default_rng(3).normal(size=(5, 4, 3))
        io.save_features(feats, tmp_path / "f.npy")
        np.testing.assert_array_equal(io.load_features(tmp_path / "f.npy"), feats)


class TestPipelineConfig:
    def test_defaults(self):
        config = PipelineConfig()
        assert config.visibility_threshold == 0.3
        assert config.groups == 30
        assert config.attention_scaling == "paper"

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"visibility_threshold": 1.5},
            {"groups": 0},
            {"denoise_steps": 0},
            {"attention_scaling": "cube"},
            {"mask_source": "magic"},
            {"patch_grid": 0},
        ],
    )
    def test_validation(self, kwargs):
        with pytest.raises(ValueError):
            PipelineConfig(**kwargs)
