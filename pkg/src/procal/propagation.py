"""Grouped propagation of per-frame features and the conditioning contracts.

Features are ``(L, m, d)`` float arrays: L frames, m patches per frame, d
values per patch.  Propagation partitions the L frames into M contiguous
groups, picks one member per group uniformly at random, and overwrites the
whole group with that member.  Picks always draw from the original
features, never from a previous step's output, so the emitted steps are
independent resamplings.

Randomness comes from PCG64 with one substream per (step, group):
``SeedSequence(seed, spawn_key=(step, group_index))``.  This makes every
pick reproducible from (seed, step, group) alone, independent of
evaluation order or parallelism.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, IndivisibleDimensions, InvalidGroupCount

_SEED_MASK = (1 << 64) - 1


def check_features(features: np.ndarray, name: str = "features") -> np.ndarray:
    arr = np.asarray(features, dtype=float)
    if arr.ndim != 3:
        raise ValueError(f"{name} must be (L, m, d), got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ValueError(f"{name} dimensions must all be >= 1, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


@dataclass(frozen=True)
class GroupPartition:
    """Contiguous cover of frames 1..length by 1-based inclusive ranges."""

    length: int
    bounds: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if not self.bounds:
            raise ValueError("partition needs at least one group")
        expected_start = 1
        for start, end in self.bounds:
            if start != expected_start or end < start:
                raise ValueError(f"groups must be contiguous, got bounds {self.bounds}")
            expected_start = end + 1
        if expected_start != self.length + 1:
            raise ValueError(
                f"groups must cover 1..{self.length}, got bounds {self.bounds}"
            )
        base = self.length // len(self.bounds)
        if any(size != base for size in self.sizes[:-1]):
            raise ValueError(
                f"all groups but the last must have floor(L/M)={base} frames"
            )

    @property
    def group_count(self) -> int:
        return len(self.bounds)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(end - start + 1 for start, end in self.bounds)


def group_partition(length: int, groups: int) -> GroupPartition:
    """Split ``length`` frames into ``groups`` contiguous groups.

    The first groups - 1 groups have floor(length / groups) frames; the
    last group absorbs the remainder.
    """
    if groups < 1 or groups > length:
        raise InvalidGroupCount(
            f"group count must satisfy 1 <= M <= L, got M={groups}, L={length}"
        )
    size = length // groups
    bounds = [(i * size + 1, (i + 1) * size) for i in range(groups - 1)]
    bounds.append(((groups - 1) * size + 1, length))
    return GroupPartition(length, tuple(bounds))


@dataclass(frozen=True)
class PropagationSchedule:
    """Record of every in-group pick: row k holds the picks of step T - k."""

    length: int
    groups: int
    steps: int
    seed: int
    picks: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        sizes = group_partition(self.length, self.groups).sizes
        if self.steps < 1 or len(self.picks) != self.steps:
            raise ValueError(f"expected {self.steps} pick rows, got {len(self.picks)}")
        for row in self.picks:
            if len(row) != self.groups:
                raise ValueError(f"expected {self.groups} picks per row, got {len(row)}")
            for pick, size in zip(row, sizes):
                if not 1 <= pick <= size:
                    raise ValueError(f"pick {pick} outside group of size {size}")

    def step_numbers(self) -> tuple[int, ...]:
        return tuple(range(self.steps, 0, -1))


def _substream(seed: int, step: int, group_index: int) -> np.random.Generator:
    # Fixed splitting rule: one PCG64 stream per (step, group).
    seq = np.random.SeedSequence(entropy=int(seed) & _SEED_MASK, spawn_key=(step, group_index))
    return np.random.Generator(np.random.PCG64(seq))


def draw_picks(partition: GroupPartition, seed: int, step: int) -> tuple[int, ...]:
    """Uniform pick in 1..size for every group, from the (step, group) substreams."""
    picks = []
    for group_index, size in enumerate(partition.sizes, start=1):
        rng = _substream(seed, step, group_index)
        picks.append(int(rng.integers(1, size + 1)))
    return tuple(picks)


def propagate_step(features: np.ndarray, partition: GroupPartition, picks) -> np.ndarray:
    """Overwrite each group with its picked member from the original features."""
    arr = check_features(features)
    if partition.length != arr.shape[0]:
        raise DimensionMismatch(
            f"partition covers {partition.length} frames, features have {arr.shape[0]}"
        )
    picks = tuple(int(p) for p in picks)
    if len(picks) != partition.group_count:
        raise DimensionMismatch(
            f"expected {partition.group_count} picks, got {len(picks)}"
        )
    out = np.empty_like(arr)
    for (start, end), pick in zip(partition.bounds, picks):
        size = end - start + 1
        if not 1 <= pick <= size:
            raise ValueError(f"pick {pick} outside group {start}..{end}")
        out[start - 1:end] = arr[start - 1 + pick - 1]
    return out


def run_propagation(
    features: np.ndarray, groups: int, steps: int, seed: int
) -> tuple[list[np.ndarray], PropagationSchedule]:
    """Emit one propagated copy per step, plus the schedule for replay.

    Steps run from ``steps`` down to 1; output index k corresponds to step
    ``steps - k``.  Every step resamples the original features.
    """
    arr = check_features(features)
    if steps < 1:
        raise ValueError(f"step count must be >= 1, got {steps}")
    partition = group_partition(arr.shape[0], groups)
    outputs = []
    pick_rows = []
    for step in range(steps, 0, -1):
        picks = draw_picks(partition, seed, step)
        pick_rows.append(picks)
        outputs.append(propagate_step(arr, partition, picks))
    schedule = PropagationSchedule(
        length=arr.shape[0],
        groups=groups,
        steps=steps,
        seed=int(seed) & _SEED_MASK,
        picks=tuple(pick_rows),
    )
    return outputs, schedule


def replay_schedule(features: np.ndarray, schedule: PropagationSchedule) -> list[np.ndarray]:
    """Reproduce the propagated steps recorded in a schedule, bit for bit."""
    arr = check_features(features)
    if arr.shape[0] != schedule.length:
        raise DimensionMismatch(
            f"schedule covers {schedule.length} frames, features have {arr.shape[0]}"
        )
    partition = group_partition(schedule.length, schedule.groups)
    return [propagate_step(arr, partition, row) for row in schedule.picks]


def assemble_condition(reference: np.ndarray, calibrated: np.ndarray) -> np.ndarray:
    """Stack reference rows on top of calibrated rows: (m, d) + (m, d) -> (2m, d)."""
    ref = np.asarray(reference, dtype=float)
    cal = np.asarray(calibrated, dtype=float)
    if ref.ndim != 2 or ref.shape != cal.shape:
        raise DimensionMismatch(
            f"reference and calibrated features must share (m, d), got {ref.shape} and {cal.shape}"
        )
    return np.vstack([ref, cal])


def cross_attention(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    scaling: str = "paper",
    return_weights: bool = False,
):
    """Softmax(q kT / divisor) v with a switchable logit divisor.

    ``scaling="paper"`` divides logits by d itself; ``"sqrt"`` uses the
    conventional sqrt(d).  Rows of the softmax weight matrix are convex
    combinations over the key rows.
    """
    q = np.asarray(q, dtype=float)
    k = np.asarray(k, dtype=float)
    v = np.asarray(v, dtype=float)
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise DimensionMismatch("q, k, v must all be 2D")
    if q.shape[1] != k.shape[1]:
        raise DimensionMismatch(f"q width {q.shape[1]} != k width {k.shape[1]}")
    if k.shape[0] != v.shape[0]:
        raise DimensionMismatch(f"k has {k.shape[0]} rows but v has {v.shape[0]}")
    if scaling not in ("paper", "sqrt"):
        raise ValueError(f"scaling must be 'paper' or 'sqrt', got {scaling!r}")

    d = q.shape[1]
    divisor = float(d) if scaling == "paper" else math.sqrt(d)
    logits = (q @ k.T) / divisor
    logits -= logits.max(axis=1, keepdims=True)
    weights = np.exp(logits)
    weights /= weights.sum(axis=1, keepdims=True)
    out = weights @ v
    if return_weights:
        return out, weights
    return out


def toy_patch_encode(image: np.ndarray, patch_grid: int) -> np.ndarray:
    """Deterministic stand-in encoder: per-patch RGB means on a g x g grid.

    Returns (g*g, 3) features in [0, 1], patches in row-major order.  The
    image height and width must both be divisible by g; alpha, when
    present, is ignored.
    """
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] not in (3, 4) or img.dtype != np.uint8:
        raise ValueError(f"expected uint8 (h, w, 3|4) image, got {img.shape} {img.dtype}")
    g = int(patch_grid)
    if g < 1:
        raise ValueError(f"patch grid must be >= 1, got {g}")
    h, w = img.shape[:2]
    if h % g or w % g:
        raise IndivisibleDimensions(
            f"image {w}x{h} is not divisible by a {g}x{g} patch grid"
        )
    rgb = img[..., :3].astype(np.float64) / 255.0
    blocks = rgb.reshape(g, h // g, g, w // g, 3)
    return blocks.mean(axis=(1, 3)).reshape(g * g, 3)
