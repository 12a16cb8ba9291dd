"""Synthetic desk-scale dataset generation.

Each caption family is a parameterized trajectory generator: the root
joint translates at a sampled speed/heading while limb joints oscillate
sinusoidally around it.  One caption therefore maps to many distinct
motions, with the spread controlled by per-family parameter ranges.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MalformedFileError, ValidationError
from .motion import DatasetEntry, Motion

_PARAM_DEFAULTS = {
    "speed": (0.5, 1.0),          # m/s along the heading (may be negative)
    "direction_deg": (-20.0, 20.0),
    "amplitude": (0.05, 0.2),     # limb swing, meters
    "frequency_hz": (1.0, 2.0),
    "phase": (0.0, 2.0 * math.pi),
}

_ROOT_HEIGHT = 0.9
_ROOT_BOB = 0.02
_LIMB_DROP = 0.45
_LIMB_SPACING = 0.15


@dataclass(frozen=True)
class FamilyRanges:
    """Uniform sampling ranges for one trajectory family."""

    speed: tuple[float, float]
    direction_deg: tuple[float, float]
    amplitude: tuple[float, float]
    frequency_hz: tuple[float, float]
    phase: tuple[float, float]

    def midpoint(self) -> dict[str, float]:
        return {k: 0.5 * (lo + hi) for k, (lo, hi) in self.__dict__.items()}


@dataclass(frozen=True)
class SyntheticSpec:
    """Dataset recipe: skeleton size, clip length, and caption families."""

    joints: int
    length: int
    fps: float
    families: dict[str, FamilyRanges]

    def __post_init__(self):
        if len(self.families) < 2:
            raise ValidationError("synthetic spec needs at least 2 caption families")
        if self.joints < 1 or self.length < 1 or self.fps <= 0:
            raise ValidationError("synthetic spec needs joints >= 1, length >= 1, fps > 0")

    @staticmethod
    def from_dict(doc: dict) -> "SyntheticSpec":
        for key in ("joints", "length", "fps", "families"):
            if key not in doc:
                raise ValidationError(f"synthetic spec is missing key {key!r}")
        families = {}
        if not isinstance(doc["families"], dict):
            raise ValidationError("synthetic spec families must be a mapping")
        for name, ranges in doc["families"].items():
            if not name or not isinstance(name, str):
                raise ValidationError("family names must be nonempty strings")
            if not isinstance(ranges, dict):
                raise ValidationError(f"family {name!r} must map parameter names to [lo, hi] ranges")
            unknown = set(ranges) - set(_PARAM_DEFAULTS)
            if unknown:
                raise ValidationError(f"family {name!r} has unknown parameters: {sorted(unknown)}")
            resolved = {}
            for param, default in _PARAM_DEFAULTS.items():
                lo, hi = ranges.get(param, default)
                lo, hi = float(lo), float(hi)
                if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                    raise ValidationError(f"family {name!r} parameter {param!r} has invalid range [{lo}, {hi}]")
                resolved[param] = (lo, hi)
            families[name] = FamilyRanges(**resolved)
        return SyntheticSpec(
            joints=int(doc["joints"]),
            length=int(doc["length"]),
            fps=float(doc["fps"]),
            families=families,
        )

    @staticmethod
    def from_file(path: str | Path) -> "SyntheticSpec":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise MalformedFileError(f"cannot read synthetic spec {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise MalformedFileError(f"{path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise MalformedFileError(f"{path} must contain a JSON object")
        return SyntheticSpec.from_dict(doc)

    def to_dict(self) -> dict:
        return {
            "joints": self.joints,
            "length": self.length,
            "fps": self.fps,
            "families": {
                name: {k: list(v) for k, v in fam.__dict__.items()}
                for name, fam in self.families.items()
            },
        }


def _trajectory(spec: SyntheticSpec, params: dict[str, float]) -> np.ndarray:
    """Build an (L, 3*J) keypoint matrix from one parameter draw."""
    tau = np.arange(spec.length) / spec.fps
    theta = math.radians(params["direction_deg"])
    heading = np.array([math.cos(theta), 0.0, math.sin(theta)])
    lateral = np.array([-math.sin(theta), 0.0, math.cos(theta)])
    swing = np.sin(2.0 * math.pi * params["frequency_hz"] * tau + params["phase"])

    joints = np.empty((spec.length, spec.joints, 3))
    root = params["speed"] * tau[:, None] * heading[None, :]
    root = root + np.array([0.0, _ROOT_HEIGHT, 0.0])
    root[:, 1] += _ROOT_BOB * swing
    joints[:, 0, :] = root
    for k in range(1, spec.joints):
        side = _LIMB_SPACING * ((k + 1) // 2) * (1.0 if k % 2 else -1.0)
        # limbs alternate swing phase, like opposing legs
        limb_swing = np.sin(
            2.0 * math.pi * params["frequency_hz"] * tau + params["phase"] + math.pi * k
        )
        joints[:, k, :] = (
            root
            + side * lateral[None, :]
            + np.array([0.0, -_LIMB_DROP, 0.0])
            + params["amplitude"] * limb_swing[:, None] * heading[None, :]
        )
    return joints.reshape(spec.length, 3 * spec.joints)


def _draw_params(fam: FamilyRanges, rng: np.random.Generator) -> dict[str, float]:
    return {
        name: float(rng.uniform(lo, hi)) if hi > lo else lo
        for name, (lo, hi) in fam.__dict__.items()
    }


def generate_synthetic_dataset(spec: SyntheticSpec, n: int, seed: int) -> list[DatasetEntry]:
    """Generate `n` caption/motion pairs, cycling families round-robin.

    Pure function of (spec, n, seed): entry i draws its parameters from
    a child stream spawned from the seed, so datasets are byte-stable.
    """
    if n < 0:
        raise ValidationError("sample count must be >= 0")
    names = list(spec.families)
    children = np.random.SeedSequence(seed).spawn(n) if n else []
    entries = []
    for i in range(n):
        name = names[i % len(names)]
        rng = np.random.Generator(np.random.PCG64(children[i]))
        params = _draw_params(spec.families[name], rng)
        frames = _trajectory(spec, params)
        entries.append(DatasetEntry(text=name, motion=Motion(frames, spec.fps)))
    return entries


def family_template(spec: SyntheticSpec, name: str) -> Motion:
    """The family's mean trajectory: every parameter at its range midpoint."""
    if name not in spec.families:
        raise ValidationError(f"unknown family {name!r}; spec has {sorted(spec.families)}")
    frames = _trajectory(spec, spec.families[name].midpoint())
    return Motion(frames, spec.fps)
