"""End-to-end wiring: render clips to pose maps, decode them back, lift the
2D observations to 3D, and recover an animation clip via IK."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .camera import Camera
from .kinematics import ClipSolveResult, solve_clip
from .posemap import (
    ColorPalette,
    Joints2D,
    PoseMap,
    decode_posemap,
    render_posemap,
)
from .reconstruct import (
    DEFAULT_LAMBDA_BONE,
    TriangulationProblem,
    TriangulationResult,
    triangulate_frame,
)
from .skeleton import (
    AnimationClip,
    JointPositions3D,
    Skeleton,
    bounding_box_diagonal,
    forward_kinematics,
    rest_positions,
)


@dataclass(frozen=True)
class ReconstructionOutput:
    clip: AnimationClip
    frames: list[TriangulationResult]
    ik: ClipSolveResult


def render_clip(
    skeleton: Skeleton,
    clip: AnimationClip,
    cameras: list[Camera],
    palette: ColorPalette,
    radius: int | None = None,
    threads: int = 1,
) -> list[list[PoseMap]]:
    """Pose maps indexed [frame][view]."""
    fks = [forward_kinematics(skeleton, pose) for pose in clip.frames]

    def one(args) -> PoseMap:
        f, v = args
        return render_posemap(
            skeleton, fks[f], cameras[v], palette, radius=radius, view_index=v, frame_index=f
        )

    jobs = [(f, v) for f in range(len(clip.frames)) for v in range(len(cameras))]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            flat = list(pool.map(one, jobs))
    else:
        flat = [one(j) for j in jobs]
    n_views = len(cameras)
    return [flat[f * n_views : (f + 1) * n_views] for f in range(len(clip.frames))]


def decode_maps(
    maps: list[list[PoseMap]],
    palette: ColorPalette,
    tau_color: float,
    threads: int = 1,
) -> list[list[Joints2D]]:
    def one(pm: PoseMap) -> Joints2D:
        return decode_posemap(pm, palette, tau_color=tau_color)

    flat_maps = [pm for frame in maps for pm in frame]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            flat = list(pool.map(one, flat_maps))
    else:
        flat = [one(pm) for pm in flat_maps]
    n_views = len(maps[0])
    return [flat[f * n_views : (f + 1) * n_views] for f in range(len(maps))]


def reconstruct_sequence(
    observations: list[list[Joints2D]],  # [frame][view]
    cameras: list[Camera],
    skeleton: Skeleton,
    fps: float,
    lambda_bone: float = DEFAULT_LAMBDA_BONE,
    threads: int = 1,
) -> ReconstructionOutput:
    """Triangulate every frame and recover joint rotations.

    Frames with no valid observation in any view become all-invalid IK
    targets, which the clip solver fills from the previous frame.
    """

    def one(frame_obs: list[Joints2D]) -> TriangulationResult:
        if not any(obs.valid.any() for obs in frame_obs):
            rest = rest_positions(skeleton)
            empty = JointPositions3D(
                rest.positions, np.zeros(skeleton.joint_count, dtype=bool)
            )
            return TriangulationResult(
                positions=empty, reproj_rms_px=0.0, bone_rms=0.0,
                iterations=0, converged=False, final_cost=0.0,
            )
        problem = TriangulationProblem(
            observations=frame_obs,
            cameras=cameras,
            skeleton=skeleton,
            lambda_bone=lambda_bone,
        )
        return triangulate_frame(problem)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, observations))
    else:
        results = [one(o) for o in observations]
    template = rest_positions(skeleton)
    targets = [r.positions for r in results]
    ik = solve_clip(skeleton, template, targets, fps)
    return ReconstructionOutput(clip=ik.clip, frames=results, ik=ik)


@dataclass(frozen=True)
class RoundTripMetrics:
    mean_error: float  # mean joint position error / bbox diagonal
    max_error: float
    per_frame_mean: np.ndarray
    bbox_diagonal: float


def roundtrip_metrics(
    skeleton: Skeleton, reference: AnimationClip, recovered: AnimationClip
) -> RoundTripMetrics:
    """FK position error of a recovered clip against its reference,
    normalized by the reference clip's bounding-box diagonal."""
    ref_pos = np.stack(
        [forward_kinematics(skeleton, p).positions for p in reference.frames]
    )
    rec_pos = np.stack(
        [forward_kinematics(skeleton, p).positions for p in recovered.frames]
    )
    diag = bounding_box_diagonal(ref_pos)
    err = np.linalg.norm(ref_pos - rec_pos, axis=2) / diag
    return RoundTripMetrics(
        mean_error=float(err.mean()),
        max_error=float(err.max()),
        per_frame_mean=err.mean(axis=1),
        bbox_diagonal=diag,
    )


def roundtrip(
    skeleton: Skeleton,
    clip: AnimationClip,
    cameras: list[Camera],
    palette: ColorPalette,
    tau_color: float,
    lambda_bone: float = DEFAULT_LAMBDA_BONE,
    threads: int = 1,
) -> tuple[ReconstructionOutput, RoundTripMetrics]:
    maps = render_clip(skeleton, clip, cameras, palette, threads=threads)
    observations = decode_maps(maps, palette, tau_color, threads=threads)
    output = reconstruct_sequence(
        observations, cameras, skeleton, clip.fps, lambda_bone, threads=threads
    )
    return output, roundtrip_metrics(skeleton, clip, output.clip)
