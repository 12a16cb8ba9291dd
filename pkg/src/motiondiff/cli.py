"""Command-line entry points.

Subcommands: gen-data, train, sample, eval, export-traj.  Every command
is deterministic given its flags (seeds are mandatory, never wall-clock)
and writes its fully resolved configuration next to its outputs.

Exit codes: 0 success, 1 validation error, 2 runtime/numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .checkpointing import load_checkpoint, save_checkpoint
from .diffusion import GuidanceConfig, TrainConfig, sample, train
from .errors import MotionDiffError, ValidationError
from .metrics import evaluate
from .motion import load_manifest, load_motion, save_manifest, save_motion
from .schedule import make_schedule
from .synthetic import SyntheticSpec, generate_synthetic_dataset
from .text import HashedBowEncoder, TableEncoder

_TRAIN_DEFAULTS = {
    "schedule": "cosine",
    "T": 1000,
    "beta_start": 1e-4,
    "beta_end": 0.02,
    "cosine_offset": 0.008,
    "batch_size": 16,
    "lr": 1e-4,
    "p_uncond": 0.1,
    "w": 2.0,
    "embed_dim": 64,
    "hidden": [64, 128],
    "levels": 2,
    "text_dim": 64,
    "text_seed": 0,
    "embedding_table": None,
}
_TRAIN_REQUIRED = ("manifest", "out_dir", "L", "steps", "seed")

_INT_KEYS = {"T", "L", "steps", "seed", "batch_size", "embed_dim", "levels", "text_dim", "text_seed"}
_FLOAT_KEYS = {"beta_start", "beta_end", "cosine_offset", "lr", "p_uncond", "w"}


def _write_json(doc: dict, path: Path) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    spec = SyntheticSpec.from_file(args.spec)
    out = Path(args.out)
    (out / "motions").mkdir(parents=True, exist_ok=True)
    entries = generate_synthetic_dataset(spec, args.n, args.seed)
    manifest_rows = []
    for i, entry in enumerate(entries):
        rel = f"motions/{i:06d}.json"
        save_motion(entry.motion, out / rel)
        manifest_rows.append((entry.text, rel))
    manifest_path = out / "manifest.jsonl"
    save_manifest(manifest_rows, manifest_path)
    _write_json(
        {"command": "gen-data", "spec": str(args.spec), "n": args.n, "seed": args.seed,
         "out": str(out), "spec_content": spec.to_dict()},
        out / "resolved_config.json",
    )
    print(manifest_path)
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _load_train_config(path: str, overrides: dict) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValidationError(f"config {path} must be a JSON object")

    cfg = dict(_TRAIN_DEFAULTS)
    cfg.update(doc)
    cfg.update({k: v for k, v in overrides.items() if v is not None})

    problems = []
    for key in _TRAIN_REQUIRED:
        if cfg.get(key) is None:
            problems.append(f"missing required key {key!r}")
    known = set(_TRAIN_DEFAULTS) | set(_TRAIN_REQUIRED)
    for key in sorted(set(cfg) - known):
        problems.append(f"unknown key {key!r}")
    for key in _INT_KEYS:
        if cfg.get(key) is not None and not isinstance(cfg[key], int):
            problems.append(f"key {key!r} must be an integer, got {cfg[key]!r}")
    for key in _FLOAT_KEYS:
        if cfg.get(key) is not None and not isinstance(cfg[key], (int, float)):
            problems.append(f"key {key!r} must be a number, got {cfg[key]!r}")
    if cfg.get("schedule") not in ("linear", "cosine"):
        problems.append(f"schedule must be 'linear' or 'cosine', got {cfg.get('schedule')!r}")
    if not isinstance(cfg.get("hidden"), list) or not all(isinstance(h, int) for h in cfg["hidden"]):
        problems.append(f"key 'hidden' must be a list of integers, got {cfg.get('hidden')!r}")
    if cfg.get("manifest") is not None and not Path(cfg["manifest"]).is_file():
        problems.append(f"manifest path {cfg.get('manifest')!r} does not exist")
    if cfg.get("embedding_table") is not None and not Path(cfg["embedding_table"]).is_file():
        problems.append(f"embedding table {cfg['embedding_table']!r} does not exist")
    if problems:
        raise ValidationError("config validation failed:\n  " + "\n  ".join(problems))
    return cfg


def cmd_train(args) -> int:
    overrides = {"steps": args.steps, "seed": args.seed, "out_dir": args.out_dir, "lr": args.lr}
    cfg = _load_train_config(args.config, overrides)

    schedule_args = (
        {"beta_start": cfg["beta_start"], "beta_end": cfg["beta_end"]}
        if cfg["schedule"] == "linear"
        else {"offset": cfg["cosine_offset"]}
    )
    schedule = make_schedule(cfg["schedule"], cfg["T"], **schedule_args)
    if cfg["embedding_table"]:
        encoder = TableEncoder.from_file(cfg["embedding_table"])
    else:
        encoder = HashedBowEncoder(dim=cfg["text_dim"], seed=cfg["text_seed"])

    dataset = load_manifest(cfg["manifest"])
    train_cfg = TrainConfig(
        schedule=schedule,
        length=cfg["L"],
        batch_size=cfg["batch_size"],
        steps=cfg["steps"],
        seed=cfg["seed"],
        lr=cfg["lr"],
        guidance=GuidanceConfig(w=cfg["w"], p_uncond=cfg["p_uncond"]),
        embed_dim=cfg["embed_dim"],
        hidden=tuple(cfg["hidden"]),
        levels=cfg["levels"],
        text_encoder=encoder,
    )
    result = train(dataset, train_cfg)

    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / "checkpoint.json"
    save_checkpoint(result.checkpoint, ckpt_path)
    loss_csv = "step,loss\n" + "".join(f"{s},{v!r}\n" for s, v in result.losses)
    (out / "loss.csv").write_text(loss_csv, encoding="utf-8")
    _write_json({"command": "train", **cfg}, out / "resolved_config.json")
    print(ckpt_path)
    return 0


# ---------------------------------------------------------------------------
# sample
# ---------------------------------------------------------------------------


def cmd_sample(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    guidance = GuidanceConfig(w=args.w if args.w is not None else 2.0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    motions = sample(ckpt, args.text, args.count, guidance, _rng(args.seed))
    files = []
    for i, m in enumerate(motions):
        rel = f"sample_{i:03d}.json"
        save_motion(m, out / rel)
        files.append(rel)
    manifest = {
        "text": args.text,
        "w": guidance.w,
        "seed": args.seed,
        "count": args.count,
        "checkpoint": str(args.checkpoint),
        "files": files,
    }
    _write_json(manifest, out / "manifest.json")
    _write_json({"command": "sample", **manifest}, out / "resolved_config.json")
    print(out)
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    spec = SyntheticSpec.from_file(args.spec)
    guidance = GuidanceConfig(w=args.w if args.w is not None else 2.0)
    report = evaluate(
        ckpt,
        spec,
        n_per_caption=args.n_per_caption,
        subset_size=args.subset_size,
        rng=_rng(args.seed),
        guidance=guidance,
    )
    report["config"].update(
        {"seed": args.seed, "checkpoint": str(args.checkpoint), "spec": str(args.spec)}
    )
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(report, out)
    _write_json({"command": "eval", **report["config"]}, out.with_name(out.name + ".config.json"))
    print(out)
    return 0


# ---------------------------------------------------------------------------
# export-traj
# ---------------------------------------------------------------------------


def cmd_export_traj(args) -> int:
    motion = load_motion(args.motion)
    rows = ["frame,joint,x,y,z"]
    for i, frame in enumerate(motion.frames):
        joints = frame.reshape(-1, 3)
        for j, (x, y, z) in enumerate(joints):
            rows.append(f"{i},{j},{x!r},{y!r},{z!r}")
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("".join(r + "\n" for r in rows), encoding="utf-8")
    _write_json(
        {"command": "export-traj", "motion": str(args.motion), "out": str(out)},
        out.with_name(out.name + ".config.json"),
    )
    print(out)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="motiondiff",
        description="Text-conditioned diffusion for 3D motion sequences.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic caption/motion dataset")
    p.add_argument("--spec", required=True, help="synthetic spec JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, required=True, help="number of entries")
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a denoiser from a dataset manifest")
    p.add_argument("--config", required=True, help="flat JSON config file")
    p.add_argument("--steps", type=int, help="override config steps")
    p.add_argument("--seed", type=int, help="override config seed")
    p.add_argument("--lr", type=float, help="override config learning rate")
    p.add_argument("--out-dir", help="override config out_dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="sample motions from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--w", type=float, default=None, help="guidance weight (default 2.0)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="compute metrics for a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--spec", required=True, help="synthetic spec JSON")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n-per-caption", type=int, default=30)
    p.add_argument("--subset-size", type=int, default=10)
    p.add_argument("--w", type=float, default=None, help="guidance weight (default 2.0)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-traj", help="dump a motion file to long-format CSV")
    p.add_argument("--motion", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_traj)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (MotionDiffError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
