"""File formats and pipeline configuration.

All structured documents are JSON with a ``format`` tag.  Floats are
serialized with Python's shortest round-trip representation, so
``load(save(x))`` reproduces values bit-exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .diagnostics import ROTATION_LIMIT, SCALE_IOU_LIMIT, MisalignmentReport, SweepPoint
from .errors import ParseError, SchemaError
from .propagation import PropagationSchedule, group_partition
from .shape import NUM_SLOTS, KeypointSet

KEYPOINT_FORMAT = "keypoints/1"
SCHEDULE_FORMAT = "propagation-schedule/1"
CALIBRATION_LOG_FORMAT = "calibration-log/1"
DIAGNOSTICS_FORMAT = "misalignment-report/1"
SWEEP_FORMAT = "sweep/1"
ERROR_FORMAT = "error/1"


@dataclass
class PipelineConfig:
    """Knobs shared by the CLI commands.

    ``groups`` and ``denoise_steps`` drive propagation; keypoints with
    confidence below ``visibility_threshold`` count as occluded.
    ``mask_source`` picks between supplied mask files ("file", with a hull
    fallback when no file is given) and always-computed keypoint hulls
    ("hull").
    """

    visibility_threshold: float = 0.3
    groups: int = 30
    denoise_steps: int = 8
    seed: int = 0
    attention_scaling: str = "paper"
    mask_source: str = "file"
    patch_grid: int = 8

    def __post_init__(self):
        if not 0.0 <= self.visibility_threshold <= 1.0:
            raise ValueError(f"visibility_threshold must be in [0, 1], got {self.visibility_threshold}")
        if self.groups < 1:
            raise ValueError(f"groups must be >= 1, got {self.groups}")
        if self.denoise_steps < 1:
            raise ValueError(f"denoise_steps must be >= 1, got {self.denoise_steps}")
        if self.attention_scaling not in ("paper", "sqrt"):
            raise ValueError(f"attention_scaling must be 'paper' or 'sqrt', got {self.attention_scaling!r}")
        if self.mask_source not in ("file", "hull"):
            raise ValueError(f"mask_source must be 'file' or 'hull', got {self.mask_source!r}")
        if self.patch_grid < 1:
            raise ValueError(f"patch_grid must be >= 1, got {self.patch_grid}")

    def as_dict(self) -> dict:
        return {
            "visibility_threshold": self.visibility_threshold,
            "groups": self.groups,
            "denoise_steps": self.denoise_steps,
            "seed": self.seed,
            "attention_scaling": self.attention_scaling,
            "mask_source": self.mask_source,
            "patch_grid": self.patch_grid,
        }


@dataclass
class KeypointDocument:
    """Per-frame keypoint triples (x, y, confidence) in canonical slot order."""

    width: int
    height: int
    source: str = "unknown"
    frames: list = field(default_factory=list)  # each entry is a (17, 3) array


def save_json(obj, path) -> None:
    """Write a JSON document with sorted keys and a trailing newline."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")




def _read_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}: {exc.msg}") from exc


def _require_format(obj, expected, path) -> None:
    if not isinstance(obj, dict):
        raise SchemaError(f"{path}: expected a JSON object at top level")
    tag = obj.get("format")
    if tag != expected:
        raise SchemaError(f"{path}: expected format {expected!r}, got {tag!r}")


def save_keypoint_document(doc: KeypointDocument, path) -> None:
    frames = []
    for i, rows in enumerate(doc.frames, start=1):
        arr = np.asarray(rows, dtype=float)
        if arr.shape != (NUM_SLOTS, 3):
            raise SchemaError(f"frame {i}: expected ({NUM_SLOTS}, 3) keypoint rows, got {arr.shape}")
        frames.append({"index": i, "keypoints": arr.tolist()})
    save_json(
        {
            "format": KEYPOINT_FORMAT,
            "width": int(doc.width),
            "height": int(doc.height),
            "source": str(doc.source),
            "frames": frames,
        },
        path,
    )


def load_keypoint_document(path) -> KeypointDocument:
    obj = _read_json(path)
    _require_format(obj, KEYPOINT_FORMAT, path)
    try:
        width = int(obj["width"])
        height = int(obj["height"])
        raw_frames = obj["frames"]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: missing or malformed header fields") from exc
    if width <= 0 or height <= 0:
        raise SchemaError(f"{path}: image dimensions must be positive")
    if not isinstance(raw_frames, list) or not raw_frames:
        raise SchemaError(f"{path}: document must contain at least one frame")

    frames = []
    for pos, entry in enumerate(raw_frames, start=1):
        if not isinstance(entry, dict) or entry.get("index") != pos:
            raise SchemaError(f"{path}: frame {pos}: indices must be contiguous from 1")
        rows = entry.get("keypoints")
        if not isinstance(rows, list) or len(rows) != NUM_SLOTS:
            count = len(rows) if isinstance(rows, list) else "none"
            raise SchemaError(f"{path}: frame {pos}: expected {NUM_SLOTS} keypoint triples, got {count}")
        arr = np.asarray(rows, dtype=float)
        if arr.shape != (NUM_SLOTS, 3):
            raise SchemaError(f"{path}: frame {pos}: keypoint rows must be (x, y, confidence) triples")
        if not np.all(np.isfinite(arr)):
            raise SchemaError(f"{path}: frame {pos}: keypoint values must be finite")
        if np.any(arr[:, 2] < 0.0) or np.any(arr[:, 2] > 1.0):
            raise SchemaError(f"{path}: frame {pos}: confidence must lie in [0, 1]")
        frames.append(arr)
    return KeypointDocument(width=width, height=height, source=str(obj.get("source", "unknown")), frames=frames)


def keypoint_sets(doc: KeypointDocument, visibility_threshold: float = 0.3) -> list[KeypointSet]:
    """Gate visibility by confidence; coordinates carry over unchanged."""
    sets = []
    for rows in doc.frames:
        visible = rows[:, 2] >= visibility_threshold
        sets.append(KeypointSet(rows[:, :2], visible))
    return sets


def load_keypoints(path, visibility_threshold: float = 0.3) -> list[KeypointSet]:
    """Load a keypoint document and return one KeypointSet per frame."""
    return keypoint_sets(load_keypoint_document(path), visibility_threshold)


def save_schedule(schedule: PropagationSchedule, path) -> None:
    save_json(
        {
            "format": SCHEDULE_FORMAT,
            "length": schedule.length,
            "groups": schedule.groups,
            "steps": schedule.steps,
            "seed": schedule.seed,
            "group_sizes": list(group_partition(schedule.length, schedule.groups).sizes),
            "step_numbers": list(schedule.step_numbers()),
            "picks": [list(row) for row in schedule.picks],
        },
        path,
    )


def load_schedule(path) -> PropagationSchedule:
    obj = _read_json(path)
    _require_format(obj, SCHEDULE_FORMAT, path)
    try:
        return PropagationSchedule(
            length=int(obj["length"]),
            groups=int(obj["groups"]),
            steps=int(obj["steps"]),
            seed=int(obj["seed"]),
            picks=tuple(tuple(int(p) for p in row) for row in obj["picks"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: malformed schedule: {exc}") from exc


def save_calibration_log(frames, path) -> None:
    entries = []
    for frame in frames:
        transform = frame.transform
        entries.append(
            {
                "index": frame.frame_index,
                "scale": transform.scale,
                "angle": transform.angle,
                "rotation": transform.rotation.tolist(),
                "translation": transform.translation.tolist(),
                "subset": frame.chosen_subset.name,
                "score": frame.score,
                "candidate_scores": dict(frame.candidate_scores),
            }
        )
    save_json({"format": CALIBRATION_LOG_FORMAT, "frames": entries}, path)


def save_diagnostics(entries, path) -> None:
    """Write per-frame misalignment reports; entries may mix reports and errors.

    Each entry is (frame_index, MisalignmentReport) or (frame_index, str)
    for frames whose metrics could not be measured.
    """
    rows = []
    for index, item in entries:
        if isinstance(item, MisalignmentReport):
            rows.append(
                {
                    "index": index,
                    "theta": item.theta,
                    "abs_theta": item.abs_theta,
                    "box_iou": item.box_iou,
                    "rotation_misaligned": item.rotation_misaligned,
                    "scale_misaligned": item.scale_misaligned,
                    "misaligned": item.misaligned,
                }
            )
        else:
            rows.append({"index": index, "error": str(item)})
    save_json(
        {
            "format": DIAGNOSTICS_FORMAT,
            "rotation_limit": ROTATION_LIMIT,
            "scale_iou_limit": SCALE_IOU_LIMIT,
            "frames": rows,
        },
        path,
    )


def save_sweep(points: list[SweepPoint], axis: str, csv_path, meta_path=None) -> None:
    """Write the sweep table as CSV (axis, value, pre_score, post_score)."""
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["axis,value,pre_score,post_score"]
    for point in points:
        lines.append(f"{point.parameter},{point.value!r},{point.pre_score!r},{point.post_score!r}")
    csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    if meta_path is not None:
        save_json(
            {
                "format": SWEEP_FORMAT,
                "axis": axis,
                "points": len(points),
                "score_definition": (
                    "pixel IoU between the reference silhouette and the target "
                    "silhouette, before (pre) and after (post) calibration; "
                    "this alignment score stands in for generated-video fidelity"
                ),
            },
            meta_path,
        )


def error_document(stage: str, exc: BaseException, exit_code: int) -> dict:
    return {
        "format": ERROR_FORMAT,
        "stage": stage,
        "error": type(exc).__name__,
        "message": str(exc),
        "exit_code": exit_code,
    }


def save_error_document(doc: dict, path) -> None:
    save_json(doc, path)


def load_image(path) -> np.ndarray:
    """Read an image file as an RGB or RGBA uint8 array."""
    with Image.open(path) as im:
        if im.mode == "RGB":
            return np.asarray(im, dtype=np.uint8)
        return np.asarray(im.convert("RGBA"), dtype=np.uint8)


def save_image(image: np.ndarray, path) -> None:
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] not in (3, 4) or arr.dtype != np.uint8:
        raise ValueError(f"expected uint8 (h, w, 3|4) image, got {arr.shape} {arr.dtype}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="RGBA" if arr.shape[2] == 4 else "RGB").save(path, format="PNG")


def load_mask(path) -> np.ndarray:
    """Read a mask image; pixels brighter than mid-gray count as set."""
    with Image.open(path) as im:
        gray = np.asarray(im.convert("L"), dtype=np.uint8)
    return gray > 127


def save_mask(mask: np.ndarray, path) -> None:
    m = np.asarray(mask)
    if m.ndim != 2 or m.dtype != bool:
        raise ValueError(f"expected boolean (h, w) mask, got {m.shape} {m.dtype}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.where(m, 255, 0).astype(np.uint8), mode="L").save(path, format="PNG")


def save_features(features: np.ndarray, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.save(path, np.asarray(features, dtype=np.float64))


def load_features(path) -> np.ndarray:
    arr = np.load(path)
    if arr.ndim != 3:
        raise SchemaError(f"{path}: expected an (L, m, d) feature array, got shape {arr.shape}")
    if not math.prod(arr.shape):
        raise SchemaError(f"{path}: feature array has an empty dimension")
    return np.asarray(arr, dtype=np.float64)
