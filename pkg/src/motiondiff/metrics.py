"""Evaluation of generated motion sets.

Diversity: mean L2 distance between two same-caption sample subsets,
paired in draw order.  Variance: mean L2 distance between index-aligned
encoded feature vectors, caption-blind.  The conditional-accuracy probe
classifies guided samples by nearest family-mean trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .checkpointing import Checkpoint
from .diffusion import GuidanceConfig, sample
from .errors import ShapeMismatchError, ValidationError
from .motion import Motion
from .synthetic import SyntheticSpec, family_template


@dataclass(frozen=True)
class GeneratedSet:
    """Per-caption sample lists; all motions share one (L, C) shape."""

    texts: tuple[str, ...]
    motions: tuple[tuple[Motion, ...], ...]

    def __post_init__(self):
        if len(self.texts) != len(self.motions) or not self.texts:
            raise ValidationError("need one nonempty motion list per text")
        shapes = {m.frames.shape for group in self.motions for m in group}
        if len(shapes) != 1:
            raise ShapeMismatchError(f"generated motions mix shapes: {sorted(shapes)}")


def diversity(gen: GeneratedSet, subset_size: int, rng: np.random.Generator) -> float:
    """Mean pairwise distance between two disjoint same-size subsets per text.

    For each caption, 2*subset_size indices are drawn without replacement
    and paired in draw order; pair distances are flattened-matrix L2.
    """
    if subset_size < 1:
        raise ValidationError("subset size must be >= 1")
    total = 0.0
    for group in gen.motions:
        n = len(group)
        if n < 2 * subset_size:
            raise ValidationError(
                f"need at least {2 * subset_size} samples per text, got {n}"
            )
        perm = rng.permutation(n)
        for i in range(subset_size):
            a = group[perm[i]].frames
            b = group[perm[subset_size + i]].frames
            total += float(np.linalg.norm((a - b).reshape(-1)))
    return total / (len(gen.texts) * subset_size)


def variance(a: np.ndarray, b: np.ndarray) -> float:
    """Mean L2 distance between index-aligned feature vectors."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape:
        raise ShapeMismatchError(f"feature sets must match in shape, got {a.shape} vs {b.shape}")
    if a.shape[0] < 1:
        raise ValidationError("feature sets must be nonempty")
    return float(np.mean(np.linalg.norm(a - b, axis=1)))


def motion_feature(motion: Motion) -> np.ndarray:
    """Caption-blind summary: per-channel mean and std plus mean frame speed.

    Width is 2C + 1; the velocity term is 0 for single-frame motions.
    """
    frames = motion.frames
    mean = frames.mean(axis=0)
    std = frames.std(axis=0)
    if frames.shape[0] < 2:
        speed = 0.0
    else:
        speed = float(np.mean(np.linalg.norm(np.diff(frames, axis=0), axis=1)))
    return np.concatenate([mean, std, [speed]])


def nearest_family(frames: np.ndarray, templates: dict[str, np.ndarray]) -> str:
    """Name of the template with minimum flattened-L2 distance."""
    if not templates:
        raise ValidationError("no family templates given")
    best_name, best_dist = None, np.inf
    for name, tmpl in templates.items():
        if tmpl.shape != frames.shape:
            raise ShapeMismatchError(
                f"template {name!r} shape {tmpl.shape} != sample shape {frames.shape}"
            )
        d = float(np.linalg.norm((frames - tmpl).reshape(-1)))
        if d < best_dist:
            best_name, best_dist = name, d
    return best_name


def family_templates(spec: SyntheticSpec) -> dict[str, np.ndarray]:
    return {name: family_template(spec, name).frames for name in spec.families}


def conditional_accuracy(
    ckpt: Checkpoint,
    spec: SyntheticSpec,
    n_per_family: int,
    rng: np.random.Generator,
    guidance: GuidanceConfig | None = None,
) -> float:
    """Fraction of guided samples landing nearest their own family template."""
    if n_per_family < 1:
        raise ValidationError("n_per_family must be >= 1")
    guidance = guidance or GuidanceConfig()
    templates = family_templates(spec)
    cfg = ckpt.denoiser_config
    if (spec.length, 3 * spec.joints) != (cfg.length, cfg.channels):
        raise ShapeMismatchError(
            f"spec clips are {(spec.length, 3 * spec.joints)} but the checkpoint "
            f"generates {(cfg.length, cfg.channels)}"
        )
    correct = 0
    children = rng.spawn(len(templates))
    for child, name in zip(children, templates):
        for m in sample(ckpt, name, n_per_family, guidance, child):
            correct += nearest_family(m.frames, templates) == name
    return correct / (len(templates) * n_per_family)


def evaluate(
    ckpt: Checkpoint,
    spec: SyntheticSpec,
    n_per_caption: int,
    subset_size: int,
    rng: np.random.Generator,
    guidance: GuidanceConfig | None = None,
) -> dict:
    """Full metric pass: per-family generation, then diversity, variance,
    and conditional accuracy (classification reuses the generated set)."""
    if n_per_caption < 2 * subset_size:
        raise ValidationError("n_per_caption must be at least 2 * subset_size")
    guidance = guidance or GuidanceConfig()
    templates = family_templates(spec)
    names = list(templates)

    gen_rng, div_rng, var_rng = rng.spawn(3)
    groups = []
    for child, name in zip(gen_rng.spawn(len(names)), names):
        groups.append(tuple(sample(ckpt, name, n_per_caption, guidance, child)))
    gen = GeneratedSet(texts=tuple(names), motions=tuple(groups))

    div = diversity(gen, subset_size, div_rng)

    feats = np.stack([motion_feature(m) for group in groups for m in group])
    perm = var_rng.permutation(feats.shape[0])
    var = variance(feats[perm[:subset_size]], feats[perm[subset_size : 2 * subset_size]])

    correct = total = 0
    for name, group in zip(names, groups):
        for m in group:
            correct += nearest_family(m.frames, templates) == name
            total += 1
    return {
        "diversity": div,
        "variance": var,
        "conditional_accuracy": correct / total,
        "config": {
            "families": names,
            "n_per_caption": n_per_caption,
            "subset_size": subset_size,
            "w": guidance.w,
            "p_uncond": guidance.p_uncond,
        },
    }
