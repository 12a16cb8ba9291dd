"""Versioned checkpoint container and its JSON serialization.

A checkpoint bundles everything sampling needs: named parameter tensors
(row-major), the schedule recipe (verified against stored alpha_bar on
load), normalization statistics, the text-encoder descriptor, and the
dataset frame rate.  Unknown format versions are rejected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .denoiser import Denoiser, DenoiserConfig, Params
from .errors import MalformedFileError, NonFiniteValueError, ValidationError
from .motion import NormStats
from .schedule import NoiseSchedule, schedule_from_dict, schedule_to_dict

FORMAT_VERSION = 1


@dataclass(frozen=True)
class Checkpoint:
    denoiser_config: DenoiserConfig
    params: Params
    schedule: NoiseSchedule
    norm_stats: NormStats | None
    text_encoder: dict
    fps: float
    version: int = FORMAT_VERSION


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    doc = {
        "format_version": ckpt.version,
        "denoiser_config": ckpt.denoiser_config.to_dict(),
        "schedule": schedule_to_dict(ckpt.schedule),
        "norm_stats": None
        if ckpt.norm_stats is None
        else {
            "mean": [float(v) for v in ckpt.norm_stats.mean],
            "std": [float(v) for v in ckpt.norm_stats.std],
        },
        "text_encoder": ckpt.text_encoder,
        "fps": float(ckpt.fps),
        "params": [
            {
                "name": name,
                "shape": list(ckpt.params[name].shape),
                "values": [float(v) for v in ckpt.params[name].reshape(-1)],
            }
            for name in sorted(ckpt.params)
        ],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise MalformedFileError(f"cannot read checkpoint {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise MalformedFileError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise MalformedFileError(f"{path} must contain a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ValidationError(
            f"unsupported checkpoint format version {version!r} (expected {FORMAT_VERSION})"
        )
    for key in ("denoiser_config", "schedule", "text_encoder", "fps", "params"):
        if key not in doc:
            raise MalformedFileError(f"{path} is missing key {key!r}")

    cfg = DenoiserConfig.from_dict(doc["denoiser_config"])
    schedule = schedule_from_dict(doc["schedule"])
    stats_doc = doc.get("norm_stats")
    stats = (
        None
        if stats_doc is None
        else NormStats(
            mean=np.array(stats_doc["mean"], dtype=np.float64),
            std=np.array(stats_doc["std"], dtype=np.float64),
        )
    )

    params: Params = {}
    for entry in doc["params"]:
        name, shape, values = entry["name"], entry["shape"], entry["values"]
        if name in params:
            raise ValidationError(f"{path}: duplicate parameter name {name!r}")
        arr = np.array(values, dtype=np.float64)
        if arr.size != int(np.prod(shape)):
            raise MalformedFileError(
                f"{path}: parameter {name} has {arr.size} values for shape {shape}"
            )
        if not np.isfinite(arr).all():
            raise NonFiniteValueError(f"{path}: parameter {name} contains non-finite values")
        params[name] = arr.reshape(shape)
    Denoiser(cfg).validate_params(params)

    return Checkpoint(
        denoiser_config=cfg,
        params=params,
        schedule=schedule,
        norm_stats=stats,
        text_encoder=doc["text_encoder"],
        fps=float(doc["fps"]),
        version=version,
    )
