"""Synthetic clip generation, dataset filtering and source-balanced sampling.

Clips are procedurally generated skeletons (chains and quadruped-like trees,
2-20 joints) driven by parameterized periodic motions, normalized so the
rest pose fits a unit bounding sphere and recentered on the origin. Each
record carries a source tag, a motion label and a motion score (mean
per-frame joint displacement, the flow-generating quantity for rendered
video).

Dataset manifest JSON lists records with file paths; clips and skeletons use
the skeleton-module JSON formats, pose maps live in PNG directories
``view{0..}/frame{000..}.png``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from . import quat
from .camera import Camera, canonical_rig, framing_distance, plucker_map, project_points
from .errors import ValidationError
from .jointdit.diffusion import TrainSample
from .jointdit.tokens import LatentDims, build_token_sequence
from .posemap import (
    ColorPalette,
    Joints2D,
    PoseMap,
    make_palette,
    render_posemap,
    save_palette,
    save_posemap,
)
from .skeleton import (
    AnimationClip,
    JointDef,
    JointPositions3D,
    Pose,
    Skeleton,
    forward_kinematics,
    save_clip,
    save_skeleton,
)

MOTION_LABELS = ("walk", "run", "jump", "wave", "turn", "idle-sway", "open-close", "swing")
SOURCES = ("mixamo-like", "vroid-like", "objaverse-like")
DEFAULT_MIN_FRAMES = 16
DEFAULT_MIN_MOTION = 0.002


@dataclass(frozen=True)
class ClipRecord:
    name: str
    skeleton: Skeleton
    clip: AnimationClip
    source: str
    label: int
    motion_score: float


@dataclass(frozen=True)
class SamplerConfig:
    probabilities: dict[str, float]

    def __post_init__(self):
        probs = dict(self.probabilities)
        if any(p < 0 for p in probs.values()):
            raise ValidationError("sampling probabilities must be nonnegative")
        if abs(sum(probs.values()) - 1.0) > 1e-9:
            raise ValidationError("sampling probabilities must sum to 1")
        object.__setattr__(self, "probabilities", probs)


def motion_score(skeleton: Skeleton, clip: AnimationClip) -> float:
    """Mean per-frame joint displacement in model units."""
    if clip.frame_count < 2:
        return 0.0
    positions = np.stack(
        [forward_kinematics(skeleton, pose).positions for pose in clip.frames]
    )
    steps = np.linalg.norm(np.diff(positions, axis=0), axis=2)
    return float(steps.mean())


def filter_clip(
    record: ClipRecord,
    min_frames: int = DEFAULT_MIN_FRAMES,
    min_motion: float = DEFAULT_MIN_MOTION,
) -> tuple[bool, str]:
    """Accept/reject with a reason naming the failed criterion.

    Clips must contain strictly more than ``min_frames`` frames and move at
    least ``min_motion`` units per frame on average.
    """
    if record.clip.frame_count <= min_frames:
        return False, "frame_count"
    if record.motion_score < min_motion:
        return False, "motion"
    return True, "ok"


def weighted_sampler(
    records: list[ClipRecord], config: SamplerConfig, seed: int
) -> Iterator[ClipRecord]:
    """Endless record stream with the configured per-source draw rates."""
    by_source: dict[str, list[ClipRecord]] = {}
    for r in records:
        by_source.setdefault(r.source, []).append(r)
    sources = [s for s, p in sorted(config.probabilities.items()) if p > 0]
    probs = np.array([config.probabilities[s] for s in sources])
    probs = probs / probs.sum()
    for s in sources:
        if not by_source.get(s):
            raise ValidationError(f"no records available for source {s!r}")
    rng = np.random.default_rng(seed)
    while True:
        source = sources[int(rng.choice(len(sources), p=probs))]
        pool = by_source[source]
        yield pool[int(rng.integers(len(pool)))]


# --- procedural skeletons and motions ------------------------------------


def _chain_skeleton(rng: np.random.Generator, n_joints: int) -> Skeleton:
    joints = [JointDef(name="joint0", parent=None, rest_offset=np.zeros(3))]
    direction = np.array([0.0, 0.0, 1.0])
    for i in range(1, n_joints):
        bend = quat.from_axis_angle(
            rng.standard_normal(3) + 1e-3, rng.normal(0.0, 0.35)
        )
        direction = quat.rotate(bend, direction)
        length = rng.uniform(0.7, 1.0)
        joints.append(
            JointDef(name=f"joint{i}", parent=i - 1, rest_offset=length * direction)
        )
    return Skeleton(joints=tuple(joints))


def _tree_skeleton(rng: np.random.Generator, n_joints: int) -> Skeleton:
    """Quadruped-like tree: a spine along +X with limbs hanging off it."""
    n_spine = max(2, min(n_joints - 1, 2 + n_joints // 5))
    joints = [JointDef(name="spine0", parent=None, rest_offset=np.zeros(3))]
    for i in range(1, n_spine):
        offset = np.array([rng.uniform(0.7, 1.0), 0.0, rng.uniform(-0.1, 0.1)])
        joints.append(JointDef(name=f"spine{i}", parent=i - 1, rest_offset=offset))
    attach_cycle = itertools.cycle(
        [(0, 1.0), (0, -1.0), (n_spine - 1, 1.0), (n_spine - 1, -1.0)]
    )
    limb_tip: dict[tuple[int, float], int] = {}
    while len(joints) < n_joints:
        spine_idx, side = next(attach_cycle)
        parent = limb_tip.get((spine_idx, side), spine_idx)
        depth = 1 if parent == spine_idx else 2
        if depth == 1:
            offset = np.array([0.0, side * rng.uniform(0.5, 0.8), rng.uniform(-0.5, -0.2)])
        else:
            offset = np.array([rng.uniform(-0.2, 0.2), side * 0.15, rng.uniform(-0.9, -0.6)])
        idx = len(joints)
        joints.append(JointDef(name=f"limb{idx}", parent=parent, rest_offset=offset))
        if depth == 1:
            limb_tip[(spine_idx, side)] = idx
        else:
            limb_tip.pop((spine_idx, side), None)
    return Skeleton(joints=tuple(joints))


def _normalized(skeleton: Skeleton) -> Skeleton:
    """Scale rest offsets so the rest pose fits a unit sphere about the root."""
    rest = forward_kinematics(skeleton, Pose.identity(skeleton.joint_count)).positions
    radius = float(np.linalg.norm(rest, axis=1).max())
    scale = 1.0 / radius if radius > 0 else 1.0
    joints = tuple(
        JointDef(name=j.name, parent=j.parent, rest_offset=j.rest_offset * scale)
        for j in skeleton.joints
    )
    return Skeleton(joints=joints)


def _motion_clip(
    rng: np.random.Generator, skeleton: Skeleton, label: int, frames: int, fps: float
) -> AnimationClip:
    n = skeleton.joint_count
    name = MOTION_LABELS[label]
    cycles = {"run": 2.0, "wave": 2.0}.get(name, 1.0)
    base_amp = {
        "walk": 0.3,
        "run": 0.4,
        "jump": 0.25,
        "wave": 0.5,
        "turn": 0.3,
        "idle-sway": 0.12,
        "open-close": 0.6,
        "swing": 0.35,
    }[name]

    axes = rng.standard_normal((n, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    phases = rng.uniform(0.0, 2 * np.pi, n)
    amps = base_amp * rng.uniform(0.6, 1.0, n)
    if name == "wave":
        # only the distal half of the skeleton oscillates
        amps[: n // 2] *= 0.1
    if name == "open-close":
        # hinge on the joints directly below the root
        first_level = {i for i, j in enumerate(skeleton.joints) if j.parent == skeleton.root_index}
        amps = np.where([i in first_level for i in range(n)], amps, amps * 0.15)

    poses = []
    for f in range(frames):
        t = f / frames
        rotations = np.zeros((n, 4))
        for j in range(n):
            angle = amps[j] * math.sin(2 * math.pi * cycles * t + phases[j])
            rotations[j] = quat.from_axis_angle(axes[j], angle)
        if name == "turn":
            rotations[skeleton.root_index] = quat.from_axis_angle(
                np.array([0.0, 0.0, 1.0]), 0.8 * math.sin(2 * math.pi * t)
            )
        if name == "swing":
            rotations[skeleton.root_index] = quat.from_axis_angle(
                np.array([0.0, 1.0, 0.0]), base_amp * math.sin(2 * math.pi * t)
            )
        translation = np.zeros(3)
        if name == "jump":
            translation[2] = 0.35 * abs(math.sin(math.pi * t * 2))
        elif name in ("walk", "run"):
            translation[1] = 0.1 * math.sin(2 * math.pi * cycles * t)
        poses.append(Pose(rotations=rotations, root_translation=translation))
    return AnimationClip(fps=fps, frames=tuple(poses))


def _recentered(skeleton: Skeleton, clip: AnimationClip) -> AnimationClip:
    """Shift root translations so the clip's joint cloud is centered on the origin."""
    positions = np.concatenate(
        [forward_kinematics(skeleton, p).positions for p in clip.frames]
    )
    center = 0.5 * (positions.max(axis=0) + positions.min(axis=0))
    frames = tuple(
        Pose(rotations=p.rotations, root_translation=p.root_translation - center)
        for p in clip.frames
    )
    return AnimationClip(fps=clip.fps, frames=frames)


def synth_clip(
    seed: int,
    n_joints: int | None = None,
    frames: int = 32,
    fps: float = 16.0,
    label: int | None = None,
) -> ClipRecord:
    """One deterministic synthetic record. Joint count defaults to
    ``2 + seed % 19`` so a consecutive seed range sweeps 2..20 joints."""
    rng = np.random.default_rng(seed)
    n = n_joints if n_joints is not None else 2 + seed % 19
    if n < 2:
        raise ValidationError("synthetic skeletons need at least 2 joints")
    use_tree = n >= 6 and rng.random() < 0.5
    skeleton = _normalized(_tree_skeleton(rng, n) if use_tree else _chain_skeleton(rng, n))
    lab = int(rng.integers(len(MOTION_LABELS))) if label is None else int(label)
    clip = _recentered(skeleton, _motion_clip(rng, skeleton, lab, frames, fps))
    source = SOURCES[int(rng.integers(len(SOURCES)))]
    return ClipRecord(
        name=f"clip{seed:04d}",
        skeleton=skeleton,
        clip=clip,
        source=source,
        label=lab,
        motion_score=motion_score(skeleton, clip),
    )


def clip_bounding_radius(skeleton: Skeleton, clip: AnimationClip) -> float:
    positions = np.concatenate(
        [forward_kinematics(skeleton, p).positions for p in clip.frames]
    )
    return float(np.linalg.norm(positions, axis=1).max())


def default_azimuths(views: int) -> tuple[float, ...]:
    """First ``views`` azimuths of the 4-view rig; evenly spaced beyond 4.

    Truncating the canonical ordering keeps 2-view rigs orthogonal (0/90)
    instead of the depth-degenerate antiparallel 0/180 pair.
    """
    if views <= 4:
        return (0.0, 90.0, 180.0, 270.0)[:views]
    return tuple(360.0 * i / views for i in range(views))


def rig_for_records(
    records: list[ClipRecord],
    resolution: int,
    views: int = 4,
    fill: float = 0.75,
    azimuths_deg: tuple[float, ...] | None = None,
) -> list[Camera]:
    """A shared orbit rig framing every record at the requested fill."""
    radius = max(clip_bounding_radius(r.skeleton, r.clip) for r in records)
    azimuths = azimuths_deg or default_azimuths(views)
    return canonical_rig(framing_distance(radius, fill=fill), resolution, azimuths)


def synth_dataset(
    count: int,
    seed: int,
    n_joints: tuple[int, int] | None = None,
    frames: int = 32,
    fps: float = 16.0,
    out_dir: str | Path | None = None,
    resolution: int = 512,
    views: int = 4,
    render_maps: bool = False,
) -> list[ClipRecord]:
    """Generate ``count`` records from consecutive seeds; optionally write
    clips, skeletons, palettes and rendered multi-view pose maps plus a
    manifest under ``out_dir``."""
    if count < 1:
        raise ValidationError("dataset count must be at least 1")
    records = []
    for i in range(count):
        n = None
        if n_joints is not None:
            lo, hi = n_joints
            n = lo + (seed + i) % (hi - lo + 1)
        records.append(synth_clip(seed + i, n_joints=n, frames=frames, fps=fps))
    if out_dir is not None:
        write_dataset(records, out_dir, resolution=resolution, views=views,
                      render_maps=render_maps)
    return records


def write_dataset(
    records: list[ClipRecord],
    out_dir: str | Path,
    resolution: int = 512,
    views: int = 4,
    render_maps: bool = False,
) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    cameras = rig_for_records(records, resolution, views) if render_maps else None
    for record in records:
        rdir = out / record.name
        rdir.mkdir(exist_ok=True)
        save_skeleton(record.skeleton, rdir / "skeleton.json")
        save_clip(record.clip, rdir / "clip.json")
        entry = {
            "name": record.name,
            "skeleton": str(rdir / "skeleton.json"),
            "clip": str(rdir / "clip.json"),
            "source": record.source,
            "label": record.label,
            "label_name": MOTION_LABELS[record.label],
            "frames": record.clip.frame_count,
            "fps": record.clip.fps,
            "motion_score": record.motion_score,
        }
        if render_maps:
            palette = make_palette(record.skeleton.joint_count, seed=0)
            save_palette(palette, rdir / "palette.json")
            maps_dir = rdir / "posemaps"
            for v, cam in enumerate(cameras):
                vdir = maps_dir / f"view{v}"
                vdir.mkdir(parents=True, exist_ok=True)
                for f, pose in enumerate(record.clip.frames):
                    fk = forward_kinematics(record.skeleton, pose)
                    pm = render_posemap(record.skeleton, fk, cam, palette,
                                        view_index=v, frame_index=f)
                    save_posemap(pm, vdir / f"frame{f:03d}.png")
            entry["posemap_dir"] = str(maps_dir)
            entry["palette"] = str(rdir / "palette.json")
        entries.append(entry)
    manifest = {"records": entries}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return out / "manifest.json"


# --- toy latent encoding for the denoiser ---------------------------------


LATENT_CHANNELS = 4
LATENT_SUPERSAMPLE = 4
# keeps the central downsample block pure marker color at supersample 4
LATENT_MARKER_RADIUS = 4


@dataclass(frozen=True)
class ToyExample:
    record: ClipRecord
    palette: ColorPalette
    latents: np.ndarray  # (N, T, h, w, c) clean token-layout values
    frame_indices: list[int]  # clip frames backing each of the 1+f latent frames


@dataclass(frozen=True)
class ToyDataset:
    examples: list[ToyExample]
    cameras: list[Camera]  # latent-resolution rig shared by all examples
    rays: np.ndarray  # (N, h, w, 6)
    dims: LatentDims

    def train_samples(self) -> list[TrainSample]:
        return [
            TrainSample(latents=e.latents, label=e.record.label, rays=self.rays)
            for e in self.examples
        ]


def _collinearity_margin(palette: ColorPalette) -> float:
    """Smallest distance of any joint color from the background->other-color
    ray (other joints and the line color); small margins make
    coverage-based decoding ambiguous."""
    bg = np.array(palette.background, dtype=np.float64)
    colors = palette.joints.astype(np.float64) - bg
    line = np.array(palette.line, dtype=np.float64) - bg
    margin = np.inf
    rays = list(colors) + [line]
    for i in range(len(colors)):
        for j, ray in enumerate(rays):
            if j == i:
                continue
            axis = ray / np.linalg.norm(ray)
            along = float(np.dot(colors[i], axis))
            if along <= 0:
                continue
            margin = min(margin, float(np.linalg.norm(colors[i] - along * axis)))
    return float(margin)


def latent_palette(joint_count: int, seed: int, min_margin: float = 60.0) -> ColorPalette:
    """Palette whose colors stay well off each other's background rays, so
    partial-coverage decoding stays unambiguous. Deterministic in ``seed``."""
    for attempt in range(256):
        palette = make_palette(joint_count, seed=seed * 1000 + attempt)
        if _collinearity_margin(palette) >= min_margin:
            return palette
    raise ValidationError("could not find a coverage-decodable palette")


def _downsample_posemap(posemap: PoseMap, factor: int) -> np.ndarray:
    """(h, w, 4) latent frame: area-averaged RGB mapped to [-1, 1] plus a
    foreground-coverage channel."""
    raster = posemap.raster.astype(np.float64)
    h, w = raster.shape[0] // factor, raster.shape[1] // factor
    blocks = raster.reshape(h, factor, w, factor, 3).mean(axis=(1, 3))
    rgb = blocks / 127.5 - 1.0
    fg = (posemap.raster != 0).any(axis=2).astype(np.float64)
    cover = fg.reshape(h, factor, w, factor).mean(axis=(1, 3))
    return np.concatenate([rgb, (2.0 * cover - 1.0)[..., None]], axis=-1)


def _rgb_proxy(
    skeleton: Skeleton,
    positions: JointPositions3D,
    camera_lat: Camera,
    palette: ColorPalette,
    sigma: float = 1.3,
) -> np.ndarray:
    """Procedural stand-in for a video latent: colored Gaussian splats at the
    projected joints, (h, w, 4) in [-1, 1]."""
    h, w = camera_lat.height, camera_lat.width
    uv, depth = project_points(camera_lat, positions.positions)
    xs = np.arange(w) + 0.5
    ys = np.arange(h) + 0.5
    rgb = np.zeros((h, w, 3))
    total = np.zeros((h, w))
    for j in range(skeleton.joint_count):
        if depth[j] <= 0:
            continue
        d2 = (xs[None, :] - uv[j, 0]) ** 2 + (ys[:, None] - uv[j, 1]) ** 2
        splat = np.exp(-d2 / (2 * sigma * sigma))
        rgb += splat[..., None] * (palette.joints[j].astype(np.float64) / 255.0)
        total += splat
    rgb = np.clip(rgb, 0.0, 1.0) * 2.0 - 1.0
    mask = 2.0 * np.minimum(total, 1.0) - 1.0
    return np.concatenate([rgb, mask[..., None]], axis=-1)


def encode_clip_latents(
    record: ClipRecord,
    cameras_full: list[Camera],
    palette: ColorPalette,
    dims: LatentDims,
) -> tuple[np.ndarray, list[int]]:
    """Clean token-layout latents for one record.

    Pose latents are pose maps rendered at ``LATENT_SUPERSAMPLE`` times the
    latent resolution and area-downsampled; RGB latents are the procedural
    splat proxy; the condition slots hold the rest-pose frame. Latent frame
    l is backed by clip frame 4*l (temporal compression 4).
    """
    frame_indices = [min(4 * l, record.clip.frame_count - 1) for l in range(dims.f + 1)]
    s = LATENT_SUPERSAMPLE
    n = dims.n_views
    views = []
    rest = forward_kinematics(record.skeleton, Pose.identity(record.skeleton.joint_count))
    for v in range(n):
        cam_full = cameras_full[v]
        cam_lat = cam_full.scaled(dims.w, dims.h)
        def pose_latent(fk):
            pm = render_posemap(record.skeleton, fk, cam_full, palette,
                                radius=LATENT_MARKER_RADIUS)
            return _downsample_posemap(pm, s)
        def rgb_latent(fk):
            return _rgb_proxy(record.skeleton, fk, cam_lat, palette)
        fks = [forward_kinematics(record.skeleton, record.clip.frames[i]) for i in frame_indices]
        grid = build_token_sequence(
            cond_rgb=rgb_latent(rest)[None],
            noisy_rgb=np.stack([rgb_latent(fk) for fk in fks]),
            cond_pose=pose_latent(rest)[None],
            noisy_pose=np.stack([pose_latent(fk) for fk in fks]),
        )
        views.append(grid.values)
    return np.stack(views), frame_indices


def build_toy_dataset(
    records: list[ClipRecord],
    dims: LatentDims,
    fill: float = 0.7,
    palette_seed: int = 0,
) -> ToyDataset:
    """Latent training set over a shared rig at the latent resolution."""
    if dims.h != dims.w:
        raise ValidationError("toy latents assume square latent grids")
    if dims.c != LATENT_CHANNELS:
        raise ValidationError(f"toy latents use {LATENT_CHANNELS} channels")
    full_res = dims.h * LATENT_SUPERSAMPLE
    cameras_full = rig_for_records(records, full_res, views=dims.n_views, fill=fill)
    cameras_lat = [c.scaled(dims.w, dims.h) for c in cameras_full]
    rays = np.stack([plucker_map(c, dims.h, dims.w).values for c in cameras_full])
    examples = []
    for i, record in enumerate(records):
        palette = latent_palette(record.skeleton.joint_count, seed=palette_seed + i)
        latents, frame_indices = encode_clip_latents(record, cameras_full, palette, dims)
        examples.append(
            ToyExample(record=record, palette=palette, latents=latents,
                       frame_indices=frame_indices)
        )
    return ToyDataset(examples=examples, cameras=cameras_lat, rays=rays, dims=dims)


def latent_to_posemap(latent_frame: np.ndarray, view_index: int = 0, frame_index: int = 0) -> PoseMap:
    """Map a latent frame's RGB channels back to a uint8 raster."""
    rgb = np.clip((latent_frame[..., :3] + 1.0) * 127.5, 0.0, 255.0)
    return PoseMap(raster=rgb.astype(np.uint8), view_index=view_index, frame_index=frame_index)


NOMINAL_MARKER_MASS = np.pi * LATENT_MARKER_RADIUS**2 / LATENT_SUPERSAMPLE**2


def decode_latent_joints(
    latent_frame: np.ndarray,
    palette: ColorPalette,
    min_mass: float = 0.5 * NOMINAL_MARKER_MASS,
    resid_tol: float = 60.0,
) -> Joints2D:
    """Subpixel joint coordinates from one pose latent frame.

    Downsampling blends each pixel linearly between the background, a marker
    color and possibly the line color, so marker coverage is recovered by
    least-squares unmixing against the (marker - bg, line - bg) basis;
    coordinates are coverage-weighted centroids. Pixels are owned by the
    marker whose unmixing explains them best. A marker whose total coverage
    mass falls below ``min_mass`` (half a nominal disc by default) is
    flagged invalid, occlusion being the usual cause.
    """
    rgb = (np.asarray(latent_frame[..., :3], dtype=np.float64) + 1.0) * 127.5
    h, w = rgb.shape[:2]
    bg = np.array(palette.background, dtype=np.float64)
    delta = (rgb - bg).reshape(-1, 3)
    n = palette.joint_count
    axes = palette.joints.astype(np.float64) - bg
    line_axis = np.array(palette.line, dtype=np.float64) - bg
    alphas = np.zeros((n, h, w))
    resids = np.zeros((n, h, w))
    for j in range(n):
        basis = np.stack([axes[j], line_axis], axis=1)  # (3, 2)
        coeffs = np.linalg.lstsq(basis, delta.T, rcond=None)[0]  # (2, npix)
        recon = basis @ np.clip(coeffs, 0.0, 1.0)
        alphas[j] = np.clip(coeffs[0], 0.0, 1.0).reshape(h, w)
        resids[j] = np.linalg.norm(delta.T - recon, axis=0).reshape(h, w)
    owner = np.argmin(resids, axis=0)
    coords = np.full((n, 2), np.nan)
    valid = np.zeros(n, dtype=bool)
    xs = np.arange(w) + 0.5
    ys = np.arange(h) + 0.5
    for j in range(n):
        weight = np.where(
            (owner == j) & (alphas[j] > 0.15) & (resids[j] < resid_tol), alphas[j], 0.0
        )
        mass = float(weight.sum())
        if mass < min_mass:
            continue
        cx = float((weight * xs[None, :]).sum() / mass)
        cy = float((weight * ys[:, None]).sum() / mass)
        coords[j] = (cx, cy)
        valid[j] = True
    return Joints2D(coords=coords, valid=valid)


def decode_pose_latents(
    pose_latents: np.ndarray,  # (N, 1+f, h, w, c)
    palette: ColorPalette,
) -> list[list[Joints2D]]:
    """Per latent frame, per view, decoded 2D joints."""
    n_views, n_frames = pose_latents.shape[:2]
    return [
        [decode_latent_joints(pose_latents[v, f], palette) for v in range(n_views)]
        for f in range(n_frames)
    ]
