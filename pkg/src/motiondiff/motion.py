"""Motion representation, normalization, and file I/O.

A pose is J joints in world-frame meters; a motion is a fixed-rate
sequence of poses stored as an (L, C) float64 matrix with C = 3*J
(joint-major flattening, so columns are [x0, y0, z0, x1, y1, z1, ...]).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    MalformedFileError,
    NonFiniteValueError,
    ShapeMismatchError,
    ValidationError,
)

STD_FLOOR = 1e-6


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Pose:
    """One skeleton configuration: (J, 3) world-frame coordinates."""

    joints: np.ndarray

    def __post_init__(self):
        j = np.asarray(self.joints, dtype=np.float64)
        if j.ndim != 2 or j.shape[1] != 3 or j.shape[0] < 1:
            raise ShapeMismatchError(f"pose must be (J, 3) with J >= 1, got {j.shape}")
        if not np.isfinite(j).all():
            raise NonFiniteValueError("pose contains non-finite coordinates")
        object.__setattr__(self, "joints", _readonly(j))

    @property
    def num_joints(self) -> int:
        return self.joints.shape[0]


@dataclass(frozen=True)
class Motion:
    """An (L, C) sequence of flattened poses sampled at `fps` frames/second."""

    frames: np.ndarray
    fps: float

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=np.float64)
        if f.ndim != 2 or f.shape[0] < 1:
            raise ShapeMismatchError(f"frames must be a 2-D (L, C) matrix with L >= 1, got shape {f.shape}")
        if f.shape[1] % 3 != 0 or f.shape[1] == 0:
            raise ShapeMismatchError(f"channel count must be a positive multiple of 3, got {f.shape[1]}")
        if not np.isfinite(f).all():
            raise NonFiniteValueError("motion contains non-finite values")
        if not (isinstance(self.fps, (int, float)) and math.isfinite(self.fps) and self.fps > 0):
            raise ValidationError(f"fps must be a positive finite number, got {self.fps!r}")
        object.__setattr__(self, "frames", _readonly(f))
        object.__setattr__(self, "fps", float(self.fps))

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    @property
    def channels(self) -> int:
        return self.frames.shape[1]

    @property
    def num_joints(self) -> int:
        return self.frames.shape[1] // 3

    def pose_at(self, i: int) -> Pose:
        return unflatten(self.frames[i])


@dataclass(frozen=True)
class DatasetEntry:
    """A (caption, motion) training pair."""

    text: str
    motion: Motion

    def __post_init__(self):
        if not isinstance(self.text, str) or not self.text:
            raise ValidationError("dataset entry text must be a nonempty string")


@dataclass(frozen=True)
class NormStats:
    """Per-channel mean and population std (std floored at STD_FLOOR)."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mean, dtype=np.float64)
        s = np.asarray(self.std, dtype=np.float64)
        if m.ndim != 1 or s.shape != m.shape:
            raise ShapeMismatchError(f"mean/std must be equal-length 1-D vectors, got {m.shape} and {s.shape}")
        if not (np.isfinite(m).all() and np.isfinite(s).all()):
            raise NonFiniteValueError("normalization stats contain non-finite values")
        if (s <= 0).any():
            raise ValidationError("std entries must be strictly positive")
        object.__setattr__(self, "mean", _readonly(m))
        object.__setattr__(self, "std", _readonly(s))

    @property
    def channels(self) -> int:
        return self.mean.shape[0]


def flatten(pose: Pose) -> np.ndarray:
    """Joint-major concatenation of a pose into a C-vector."""
    return pose.joints.reshape(-1).copy()


def unflatten(vec: np.ndarray) -> Pose:
    """Inverse of :func:`flatten`."""
    v = np.asarray(vec, dtype=np.float64)
    if v.ndim != 1 or v.size % 3 != 0 or v.size == 0:
        raise ShapeMismatchError(f"flattened pose length must be a positive multiple of 3, got {v.shape}")
    return Pose(v.reshape(-1, 3))


def compute_norm_stats(dataset: list[DatasetEntry]) -> NormStats:
    """Per-channel mean and population std over all frames of all motions."""
    if not dataset:
        raise ValidationError("cannot compute normalization stats of an empty dataset")
    c = dataset[0].motion.channels
    for e in dataset:
        if e.motion.channels != c:
            raise ShapeMismatchError(
                f"inconsistent channel counts in dataset: {e.motion.channels} != {c}"
            )
    stacked = np.concatenate([e.motion.frames for e in dataset], axis=0)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)  # population std (ddof=0)
    return NormStats(mean=mean, std=np.maximum(std, STD_FLOOR))


def normalize(motion: Motion, stats: NormStats) -> Motion:
    if motion.channels != stats.channels:
        raise ShapeMismatchError(
            f"motion has {motion.channels} channels but stats have {stats.channels}"
        )
    return Motion((motion.frames - stats.mean) / stats.std, motion.fps)


def denormalize(motion: Motion, stats: NormStats) -> Motion:
    if motion.channels != stats.channels:
        raise ShapeMismatchError(
            f"motion has {motion.channels} channels but stats have {stats.channels}"
        )
    return Motion(motion.frames * stats.std + stats.mean, motion.fps)


def crop_to_length(motion: Motion, length: int, rng: np.random.Generator) -> Motion:
    """Fit a motion to a fixed training length.

    Shorter motions are rejected; longer ones are cropped starting at a
    random offset drawn from `rng`.
    """
    if motion.length < length:
        raise ValidationError(
            f"motion of length {motion.length} is shorter than the required {length} frames"
        )
    if motion.length == length:
        return motion
    offset = int(rng.integers(0, motion.length - length + 1))
    return Motion(motion.frames[offset : offset + length], motion.fps)


# ---------------------------------------------------------------------------
# File formats
#
# Motion file: JSON {"fps": number, "joints": J, "frames": [[C numbers], ...]}
# Dataset manifest: JSON-Lines, one {"text": str, "motion": relative-path}.
# ---------------------------------------------------------------------------


def save_motion(motion: Motion, path: str | Path) -> None:
    """Write a motion as JSON; floats keep full round-trip precision."""
    doc = {
        "fps": motion.fps,
        "joints": motion.num_joints,
        "frames": [[float(v) for v in row] for row in motion.frames],
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_motion(path: str | Path) -> Motion:
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise MalformedFileError(f"cannot read motion file {path}: {exc}") from exc
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise MalformedFileError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or not {"fps", "joints", "frames"} <= set(doc):
        raise MalformedFileError(f"{path} is missing required keys fps/joints/frames")
    fps, joints, frames = doc["fps"], doc["joints"], doc["frames"]
    if not isinstance(joints, int) or joints < 1:
        raise MalformedFileError(f"{path}: joints must be a positive integer")
    if not isinstance(frames, list) or not frames:
        raise MalformedFileError(f"{path}: frames must be a nonempty list of rows")
    width = 3 * joints
    rows = []
    for i, row in enumerate(frames):
        if not isinstance(row, list) or not all(isinstance(v, (int, float)) for v in row):
            raise MalformedFileError(f"{path}: frame {i} is not a list of numbers")
        if len(row) != width:
            raise ShapeMismatchError(
                f"{path}: frame {i} has {len(row)} values, expected {width} (3*joints)"
            )
        rows.append(row)
    arr = np.array(rows, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise NonFiniteValueError(f"{path}: frames contain non-finite values")
    if not isinstance(fps, (int, float)) or not math.isfinite(fps) or fps <= 0:
        raise MalformedFileError(f"{path}: fps must be a positive number")
    return Motion(arr, float(fps))


def save_manifest(entries: list[tuple[str, str]], path: str | Path) -> None:
    """Write a dataset manifest: one {"text", "motion"} JSON object per line."""
    lines = [json.dumps({"text": t, "motion": m}) for t, m in entries]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def load_manifest(path: str | Path) -> list[DatasetEntry]:
    """Load a manifest and the motion files it references (relative paths)."""
    p = Path(path)
    try:
        raw = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise MalformedFileError(f"cannot read manifest {path}: {exc}") from exc
    entries = []
    for i, line in enumerate(raw.splitlines()):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedFileError(f"{path}: line {i + 1} is not valid JSON") from exc
        if not isinstance(doc, dict) or "text" not in doc or "motion" not in doc:
            raise MalformedFileError(f"{path}: line {i + 1} is missing text/motion keys")
        motion = load_motion(p.parent / doc["motion"])
        entries.append(DatasetEntry(text=doc["text"], motion=motion))
    return entries
