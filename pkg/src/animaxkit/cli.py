"""Command-line surface.

Subcommands: render, reconstruct, roundtrip, toy-train, toy-sample, filter,
rig. Every run prints a JSON report on stdout (success or failure); artifact
files are written atomically (temp file + rename). ``ANIMAXKIT_THREADS``
provides the default for ``--threads``. Exit codes: 0 ok, 2 IO, 3
validation, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import datakit, pipeline
from .camera import canonical_rig, framing_distance, load_cameras, save_cameras
from .errors import NumericalError, ToolkitError, ValidationError
from .jointdit import DenoiserConfig, LatentDims, TrainConfig
from .jointdit.checkpoint import load_checkpoint, save_checkpoint
from .jointdit.diffusion import sample as diffusion_sample
from .jointdit.diffusion import train_toy, write_loss_csv
from .posemap import (
    DEFAULT_COLOR_THRESHOLD,
    load_palette,
    load_posemap,
    make_palette,
    palette_to_dict,
    save_palette,
    save_posemap,
)
from .reconstruct import DEFAULT_LAMBDA_BONE
from .skeleton import clip_to_dict, load_clip, load_skeleton

RUN_REPORT_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "animaxkit run report",
    "type": "object",
    "required": ["command", "seed", "status", "inputs", "timings"],
    "properties": {
        "command": {"type": "string"},
        "seed": {"type": "integer"},
        "status": {"type": "string", "enum": ["ok", "error"]},
        "inputs": {"type": "object"},
        "outputs": {"type": "object"},
        "timings": {"type": "object", "additionalProperties": {"type": "number"}},
        "metrics": {"type": "object"},
        "frames": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["frame", "reproj_rms_px", "bone_rms", "iterations", "converged"],
                "properties": {
                    "frame": {"type": "integer"},
                    "reproj_rms_px": {"type": "number"},
                    "bone_rms": {"type": "number"},
                    "iterations": {"type": "integer"},
                    "converged": {"type": "boolean"},
                },
            },
        },
        "error": {"type": "string"},
    },
}


@dataclass
class RunReport:
    command: str
    seed: int
    status: str = "ok"
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    frames: list = field(default_factory=list)
    error: str | None = None

    def to_dict(self) -> dict:
        data = asdict(self)
        if data["error"] is None:
            del data["error"]
        return data


def write_text_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def write_json_atomic(path: Path, obj) -> None:
    write_text_atomic(path, json.dumps(obj, indent=2))


def _save_posemap_atomic(posemap, path: Path) -> None:
    tmp = path.with_name(path.name + ".tmp.png")
    save_posemap(posemap, tmp)
    os.replace(tmp, path)


class _Timer:
    def __init__(self, report: RunReport, stage: str):
        self.report = report
        self.stage = stage

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.report.timings[self.stage] = time.perf_counter() - self.start
        return False


def _default_threads() -> int:
    env = os.environ.get("ANIMAXKIT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def _parse_azimuths(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError as exc:
        raise ValidationError(f"bad azimuth list {text!r}") from exc


def _parse_range(text: str) -> tuple[int, int]:
    try:
        lo, hi = (int(x) for x in text.split(","))
    except ValueError as exc:
        raise ValidationError(f"bad range {text!r}, expected 'lo,hi'") from exc
    if lo > hi:
        raise ValidationError(f"bad range {text!r}: lo > hi")
    return lo, hi


def _rig_for(args, skeleton, clip) -> list:
    if args.cameras:
        return load_cameras(args.cameras)
    radius = datakit.clip_bounding_radius(skeleton, clip)
    distance = args.distance or framing_distance(radius, fill=args.fill)
    azimuths = (
        _parse_azimuths(args.azimuths)
        if args.azimuths
        else datakit.default_azimuths(args.views)
    )
    return canonical_rig(distance, args.resolution, azimuths)


# --- subcommand implementations ------------------------------------------


def cmd_rig(args, report: RunReport) -> None:
    azimuths = _parse_azimuths(args.azimuths)
    cameras = canonical_rig(args.distance, args.resolution, azimuths, args.elevation, args.fov)
    with _Timer(report, "write"):
        out = Path(args.out)
        save_cameras(cameras, out.with_name(out.name + ".tmp"))
        os.replace(out.with_name(out.name + ".tmp"), out)
    report.outputs["cameras"] = str(args.out)
    report.metrics["views"] = len(cameras)


def cmd_render(args, report: RunReport) -> None:
    skeleton = load_skeleton(args.skeleton)
    clip = load_clip(args.clip)
    report.inputs.update({"skeleton": args.skeleton, "clip": args.clip})
    cameras = _rig_for(args, skeleton, clip)
    palette = make_palette(skeleton.joint_count, seed=args.palette_seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with _Timer(report, "render"):
        maps = pipeline.render_clip(
            skeleton, clip, cameras, palette, radius=args.radius, threads=args.threads
        )
    with _Timer(report, "write"):
        for v in range(len(cameras)):
            (out_dir / f"view{v}").mkdir(exist_ok=True)
        for f, frame_maps in enumerate(maps):
            for v, pm in enumerate(frame_maps):
                _save_posemap_atomic(pm, out_dir / f"view{v}" / f"frame{f:03d}.png")
        write_json_atomic(out_dir / "palette.json", palette_to_dict(palette))
        save_cameras(cameras, out_dir / "cameras.json.tmp")
        os.replace(out_dir / "cameras.json.tmp", out_dir / "cameras.json")
    report.outputs["directory"] = str(out_dir)
    report.metrics.update(
        {"views": len(cameras), "frames": clip.frame_count,
         "images": len(cameras) * clip.frame_count}
    )


def _load_map_dir(maps_dir: Path, n_views: int) -> list[list]:
    for v in range(n_views):
        if not (maps_dir / f"view{v}").is_dir():
            raise FileNotFoundError(f"missing view directory view{v} under {maps_dir}")
    frame_files = sorted((maps_dir / "view0").glob("frame*.png"))
    if not frame_files:
        raise FileNotFoundError(f"no frame PNGs under {maps_dir}/view0")
    maps = []
    for f, ref in enumerate(frame_files):
        row = []
        for v in range(n_views):
            path = maps_dir / f"view{v}" / ref.name
            if not path.is_file():
                raise FileNotFoundError(f"missing {path}")
            row.append(load_posemap(path, view_index=v, frame_index=f))
        maps.append(row)
    return maps


def cmd_reconstruct(args, report: RunReport) -> None:
    maps_dir = Path(args.maps)
    cameras = load_cameras(args.cameras or maps_dir / "cameras.json")
    palette = load_palette(args.palette or maps_dir / "palette.json")
    skeleton = load_skeleton(args.skeleton)
    report.inputs.update({"maps": str(maps_dir), "skeleton": args.skeleton})
    with _Timer(report, "load"):
        maps = _load_map_dir(maps_dir, len(cameras))
    with _Timer(report, "decode"):
        observations = pipeline.decode_maps(maps, palette, args.tau_color, threads=args.threads)
    with _Timer(report, "triangulate"):
        output = pipeline.reconstruct_sequence(
            observations, cameras, skeleton, fps=args.fps,
            lambda_bone=args.lambda_bone, threads=args.threads,
        )
    with _Timer(report, "write"):
        write_json_atomic(Path(args.out), clip_to_dict(output.clip))
    report.outputs["clip"] = args.out
    for f, res in enumerate(output.frames):
        report.frames.append(
            {
                "frame": f,
                "reproj_rms_px": res.reproj_rms_px,
                "bone_rms": res.bone_rms,
                "iterations": res.iterations,
                "converged": res.converged,
                "ik_residual": float(output.ik.residuals[f].max()),
            }
        )
    report.metrics["mean_reproj_rms_px"] = float(
        np.mean([r.reproj_rms_px for r in output.frames])
    )
    report.metrics["mean_bone_rms"] = float(np.mean([r.bone_rms for r in output.frames]))


def cmd_roundtrip(args, report: RunReport) -> None:
    skeleton = load_skeleton(args.skeleton)
    clip = load_clip(args.clip)
    report.inputs.update({"skeleton": args.skeleton, "clip": args.clip})
    cameras = _rig_for(args, skeleton, clip)
    palette = make_palette(skeleton.joint_count, seed=args.palette_seed)
    with _Timer(report, "roundtrip"):
        output, metrics = pipeline.roundtrip(
            skeleton, clip, cameras, palette,
            tau_color=args.tau_color, lambda_bone=args.lambda_bone, threads=args.threads,
        )
    if args.out:
        write_json_atomic(Path(args.out), clip_to_dict(output.clip))
        report.outputs["clip"] = args.out
    for f, res in enumerate(output.frames):
        report.frames.append(
            {
                "frame": f,
                "reproj_rms_px": res.reproj_rms_px,
                "bone_rms": res.bone_rms,
                "iterations": res.iterations,
                "converged": res.converged,
                "position_error": float(metrics.per_frame_mean[f]),
            }
        )
    report.metrics.update(
        {
            "mean_position_error": metrics.mean_error,
            "max_position_error": metrics.max_error,
            "bbox_diagonal": metrics.bbox_diagonal,
        }
    )


def cmd_toy_train(args, report: RunReport) -> None:
    import torch

    torch.set_num_threads(args.threads)
    joints = _parse_range(args.joints)
    dims = LatentDims(f=args.f, h=args.latent, w=args.latent,
                      c=datakit.LATENT_CHANNELS, n_views=args.views)
    config = DenoiserConfig(
        blocks=args.blocks, heads=args.heads, width=args.width,
        label_vocab=len(datakit.MOTION_LABELS), cond_drop_prob=args.cond_drop,
        guidance_scale=args.guidance, sample_steps=args.steps_sample,
    )
    with _Timer(report, "dataset"):
        records = datakit.synth_dataset(
            args.count, args.seed, n_joints=joints, frames=args.frames
        )
        toyset = datakit.build_toy_dataset(records, dims, palette_seed=args.seed)
    with _Timer(report, "train"):
        model, losses = train_toy(
            toyset.train_samples(), config, dims,
            TrainConfig(steps=args.steps, batch_size=args.batch, lr=args.lr, seed=args.seed),
        )
    with _Timer(report, "write"):
        extra = {
            "dataset": {
                "count": args.count, "seed": args.seed, "joints": list(joints),
                "frames": args.frames,
            },
            "final_loss": losses[-1],
            "initial_loss": losses[0],
        }
        tmp = Path(args.out + ".tmp")
        save_checkpoint(tmp, model, extra=extra)
        os.replace(tmp, args.out)
        if args.loss_csv:
            tmp_csv = Path(args.loss_csv + ".tmp")
            write_loss_csv(losses, tmp_csv)
            os.replace(tmp_csv, args.loss_csv)
            report.outputs["loss_csv"] = args.loss_csv
    report.outputs["checkpoint"] = args.out
    report.metrics.update(
        {"initial_loss": losses[0], "final_loss": losses[-1],
         "loss_ratio": losses[-1] / losses[0], "steps": len(losses)}
    )


def _rebuild_toyset(extra: dict, dims: LatentDims) -> datakit.ToyDataset:
    try:
        ds = extra["dataset"]
        records = datakit.synth_dataset(
            ds["count"], ds["seed"], n_joints=tuple(ds["joints"]), frames=ds["frames"]
        )
        return datakit.build_toy_dataset(records, dims, palette_seed=ds["seed"])
    except (KeyError, TypeError) as exc:
        raise ValidationError(
            "checkpoint lacks the dataset provenance needed to rebuild "
            f"sampling conditions ({exc})"
        ) from exc


def cmd_toy_sample(args, report: RunReport) -> None:
    import torch

    torch.set_num_threads(args.threads)
    model, extra = load_checkpoint(args.checkpoint)
    report.inputs["checkpoint"] = args.checkpoint
    dims = model.dims
    config = DenoiserConfig(
        **{**asdict(model.config), "guidance_scale": args.guidance,
           "sample_steps": args.steps}
    )
    with _Timer(report, "dataset"):
        toyset = _rebuild_toyset(extra, dims)
    example = toyset.examples[args.index]
    grid_dims = toyset.dims
    cond_rgb = example.latents[:, grid_dims.cond_rgb_slot : grid_dims.cond_rgb_slot + 1]
    cond_pose = example.latents[:, grid_dims.cond_pose_slot : grid_dims.cond_pose_slot + 1]
    with _Timer(report, "sample"):
        rgb, pose = diffusion_sample(
            model, cond_rgb, cond_pose, toyset.rays, example.record.label,
            config=config, seed=args.seed,
        )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with _Timer(report, "decode"):
        joints = datakit.decode_pose_latents(pose, example.palette)
        decoded = [
            [
                {"coords": j.coords.tolist(), "valid": j.valid.tolist()}
                for j in frame
            ]
            for frame in joints
        ]
    with _Timer(report, "write"):
        for name, arr in (("rgb_latents", rgb), ("pose_latents", pose)):
            tmp = out_dir / f"{name}.tmp.npy"  # np.save insists on the suffix
            np.save(tmp, arr.astype(np.float32))
            os.replace(tmp, out_dir / f"{name}.npy")
        for v in range(pose.shape[0]):
            (out_dir / f"view{v}").mkdir(exist_ok=True)
            for f in range(pose.shape[1]):
                pm = datakit.latent_to_posemap(pose[v, f], view_index=v, frame_index=f)
                _save_posemap_atomic(pm, out_dir / f"view{v}" / f"frame{f:03d}.png")
        write_json_atomic(out_dir / "joints2d.json", {"frames": decoded})
        save_palette(example.palette, out_dir / "palette.json.tmp")
        os.replace(out_dir / "palette.json.tmp", out_dir / "palette.json")
        save_cameras(toyset.cameras, out_dir / "cameras.json.tmp")
        os.replace(out_dir / "cameras.json.tmp", out_dir / "cameras.json")
    report.outputs["directory"] = str(out_dir)
    report.metrics.update(
        {"views": int(pose.shape[0]), "latent_frames": int(pose.shape[1]),
         "guidance": args.guidance, "steps": args.steps,
         "label": int(example.record.label)}
    )


def cmd_filter(args, report: RunReport) -> None:
    manifest_path = Path(args.manifest)
    data = json.loads(manifest_path.read_text(encoding="utf-8"))
    entries = data.get("records", [])
    accepted, rejected = [], []
    for i, entry in enumerate(entries):
        try:
            frames = int(entry["frames"])
            score = float(entry["motion_score"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"manifest record {i} is malformed: {exc}") from exc
        if frames <= args.min_frames:
            rejected.append({"record": entry, "reason": "frame_count"})
        elif score < args.min_motion:
            rejected.append({"record": entry, "reason": "motion"})
        else:
            accepted.append(entry)
    out = {
        "records": accepted,
        "rejected": rejected,
        "stats": {
            "input": len(entries),
            "accepted": len(accepted),
            "rejected": len(rejected),
        },
    }
    with _Timer(report, "write"):
        write_json_atomic(Path(args.out), out)
    report.inputs["manifest"] = str(manifest_path)
    report.outputs["manifest"] = args.out
    report.metrics.update(out["stats"])


# --- argument parsing ------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="animaxkit",
        description="Render pose maps from skeletal clips, reconstruct clips "
        "from multi-view pose maps, and train/sample the toy video-pose "
        "denoiser.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=_default_threads())
        p.add_argument("--report", help="also write the run report to this path")

    def rig_opts(p):
        p.add_argument("--cameras", help="camera JSON (overrides the canonical rig)")
        p.add_argument("--resolution", type=int, default=512)
        p.add_argument("--views", type=int, default=4)
        p.add_argument("--azimuths", help="comma-separated azimuth override, degrees")
        p.add_argument("--distance", type=float, default=None)
        p.add_argument("--fill", type=float, default=0.75)

    p = sub.add_parser("rig", help="emit canonical orbit cameras")
    common(p)
    p.add_argument("--distance", type=float, required=True)
    p.add_argument("--resolution", type=int, default=512)
    p.add_argument("--azimuths", default="0,90,180,270")
    p.add_argument("--elevation", type=float, default=0.0)
    p.add_argument("--fov", type=float, default=40.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rig)

    p = sub.add_parser("render", help="render multi-view pose maps for a clip")
    common(p)
    p.add_argument("--skeleton", required=True)
    p.add_argument("--clip", required=True)
    rig_opts(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--radius", type=int, default=None, help="marker radius in px")
    p.add_argument("--palette-seed", type=int, default=0)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("reconstruct", help="recover a clip from pose-map directories")
    common(p)
    p.add_argument("--maps", required=True)
    p.add_argument("--skeleton", required=True)
    p.add_argument("--cameras", default=None)
    p.add_argument("--palette", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--fps", type=float, default=16.0)
    p.add_argument("--lambda-bone", type=float, default=DEFAULT_LAMBDA_BONE)
    p.add_argument("--tau-color", type=float, default=DEFAULT_COLOR_THRESHOLD)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("roundtrip", help="render, decode, triangulate and solve IK")
    common(p)
    p.add_argument("--skeleton", required=True)
    p.add_argument("--clip", required=True)
    rig_opts(p)
    p.add_argument("--out", default=None, help="write the recovered clip JSON here")
    p.add_argument("--palette-seed", type=int, default=0)
    p.add_argument("--lambda-bone", type=float, default=DEFAULT_LAMBDA_BONE)
    p.add_argument("--tau-color", type=float, default=DEFAULT_COLOR_THRESHOLD)
    p.set_defaults(func=cmd_roundtrip)

    p = sub.add_parser("toy-train", help="train the toy denoiser on synthetic latents")
    common(p)
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--blocks", type=int, default=2)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--views", type=int, default=2)
    p.add_argument("--latent", type=int, default=8, help="latent h=w")
    p.add_argument("--f", type=int, default=2, help="latent temporal length minus one")
    p.add_argument("--joints", default="2,4", help="joint-count range lo,hi")
    p.add_argument("--frames", type=int, default=32)
    p.add_argument("--cond-drop", type=float, default=0.2)
    p.add_argument("--guidance", type=float, default=3.0)
    p.add_argument("--steps-sample", type=int, default=50)
    p.add_argument("--out", required=True)
    p.add_argument("--loss-csv", default=None)
    p.set_defaults(func=cmd_toy_train)

    p = sub.add_parser("toy-sample", help="sample the toy denoiser with guidance")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--index", type=int, default=0, help="training condition index")
    p.add_argument("--guidance", type=float, default=3.0)
    p.add_argument("--steps", type=int, default=50, help="denoising steps")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_toy_sample)

    p = sub.add_parser("filter", help="apply dataset filters to a manifest")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--min-frames", type=int, default=datakit.DEFAULT_MIN_FRAMES)
    p.add_argument("--min-motion", type=float, default=datakit.DEFAULT_MIN_MOTION)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_filter)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    report = RunReport(command=args.command, seed=args.seed)
    code = 0
    try:
        args.func(args, report)
    except ValidationError as exc:
        report.status, report.error, code = "error", str(exc), 3
    except NumericalError as exc:
        report.status, report.error, code = "error", str(exc), 4
    except OSError as exc:
        report.status, report.error, code = "error", str(exc), 2
    except ToolkitError as exc:
        report.status, report.error, code = "error", str(exc), 1
    print(json.dumps(report.to_dict(), indent=2))
    if args.report:
        write_json_atomic(Path(args.report), report.to_dict())
    return code


if __name__ == "__main__":
    sys.exit(main())
