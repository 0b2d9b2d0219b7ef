"""Joint-rotation estimation from 3D joint positions (inverse of FK).

A single root-to-leaf traversal: at each joint, the local rotation is chosen
so the directions to its children match the target directions, given the
ancestor rotations already fixed. Single-child joints use the shortest-arc
rotation (twist about the bone axis is unobservable from head positions, so
it is pinned to zero); multi-child joints use the closed-form least-squares
rotation over all child directions (SVD orthogonal alignment with
determinant correction). Leaf joints get the identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import quat
from .errors import ValidationError
from .skeleton import AnimationClip, JointPositions3D, Pose, Skeleton, forward_kinematics

DIRECTION_TOL = 1e-6


@dataclass(frozen=True)
class IkFrameResult:
    pose: Pose
    residuals: np.ndarray  # per-joint |FK(pose) - target|, 0 for invalid targets


@dataclass(frozen=True)
class ClipSolveResult:
    clip: AnimationClip
    residuals: np.ndarray  # (frames, joints)
    filled: np.ndarray  # (frames,) True where a frame was copied from its predecessor


def rotation_between(from_dir: np.ndarray, to_dir: np.ndarray) -> np.ndarray:
    """Shortest-arc unit quaternion q with rotate(q, from_dir) == to_dir.

    Antiparallel inputs rotate 180 degrees about a deterministic
    perpendicular axis (built from the smallest component of ``from_dir``).
    """
    f = np.asarray(from_dir, dtype=np.float64)
    t = np.asarray(to_dir, dtype=np.float64)
    fn, tn = np.linalg.norm(f), np.linalg.norm(t)
    if fn < DIRECTION_TOL or tn < DIRECTION_TOL:
        raise ValidationError("degenerate direction: zero-length input")
    if abs(fn - 1.0) > 1e-6 or abs(tn - 1.0) > 1e-6:
        raise ValidationError("rotation_between expects unit-norm directions")
    f = f / fn
    t = t / tn
    d = float(np.dot(f, t))
    if d < -1.0 + 1e-12:
        basis = np.zeros(3)
        basis[int(np.argmin(np.abs(f)))] = 1.0
        axis = np.cross(f, basis)
        axis /= np.linalg.norm(axis)
        return np.concatenate([[0.0], axis])
    q = np.concatenate([[1.0 + d], np.cross(f, t)])
    return quat.normalize(q)


def _align_rotation(rest_dirs: np.ndarray, target_dirs: np.ndarray) -> np.ndarray:
    """Least-squares rotation R mapping rest directions onto target directions."""
    m = target_dirs.T @ rest_dirs
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    r = u @ np.diag([1.0, 1.0, d]) @ vt
    return quat.from_matrix(r)


def solve_frame(
    skeleton: Skeleton, template: JointPositions3D, target: JointPositions3D
) -> IkFrameResult:
    """Estimate one frame's pose from target joint positions.

    ``template`` must be the rest-pose FK positions. Bones touching an
    invalid target joint are skipped; a joint with no usable child bones
    keeps the identity rotation. Root translation is the offset of the
    target root from the template root (or, if the root is invalid, the
    mean offset of the valid joints).
    """
    n = skeleton.joint_count
    if template.positions.shape[0] != n or target.positions.shape[0] != n:
        raise ValidationError("template/target joint count must match the skeleton")

    root = skeleton.root_index
    if target.valid[root]:
        root_translation = target.positions[root] - template.positions[root]
    elif target.valid.any():
        sel = target.valid
        root_translation = (target.positions[sel] - template.positions[sel]).mean(axis=0)
    else:
        root_translation = np.zeros(3)

    rotations = np.tile(quat.IDENTITY, (n, 1))
    globals_ = np.tile(quat.IDENTITY, (n, 1))
    for j in range(n):
        parent = skeleton.joints[j].parent
        g_parent = quat.IDENTITY if parent is None else globals_[parent]
        rest_dirs = []
        target_dirs = []
        if target.valid[j]:
            for c in skeleton.children_of(j):
                if not target.valid[c]:
                    continue
                offset = skeleton.joints[c].rest_offset
                delta = target.positions[c] - target.positions[j]
                if np.linalg.norm(delta) < DIRECTION_TOL:
                    continue
                rest_dirs.append(offset / np.linalg.norm(offset))
                # express the world-space target direction in the frame the
                # local rotation acts in (ancestors already applied)
                target_dirs.append(
                    quat.rotate(quat.conjugate(g_parent), delta / np.linalg.norm(delta))
                )
        if len(rest_dirs) == 1:
            rotations[j] = rotation_between(rest_dirs[0], target_dirs[0])
        elif len(rest_dirs) >= 2:
            rotations[j] = _align_rotation(np.stack(rest_dirs), np.stack(target_dirs))
        globals_[j] = quat.multiply(g_parent, rotations[j])

    pose = Pose(rotations=quat.normalize(rotations), root_translation=root_translation)
    fk = forward_kinematics(skeleton, pose)
    residuals = np.where(
        target.valid,
        np.linalg.norm(fk.positions - target.positions, axis=1),
        0.0,
    )
    return IkFrameResult(pose=pose, residuals=residuals)


def solve_clip(
    skeleton: Skeleton,
    template: JointPositions3D,
    targets: list[JointPositions3D],
    fps: float,
) -> ClipSolveResult:
    """Per-frame IK over a sequence of target positions.

    Frames whose targets are entirely invalid inherit the previous frame's
    pose (the first frame falls back to rest) and are flagged in ``filled``.
    """
    if not targets:
        raise ValidationError("solve_clip needs at least one frame of targets")
    n = skeleton.joint_count
    frames: list[Pose] = []
    residuals = np.zeros((len(targets), n))
    filled = np.zeros(len(targets), dtype=bool)
    for f, target in enumerate(targets):
        if target.positions.shape[0] != n:
            raise ValidationError(f"frame {f}: target joint count mismatch")
        if not target.valid.any():
            frames.append(frames[-1] if frames else Pose.identity(n))
            filled[f] = True
            continue
        try:
            result = solve_frame(skeleton, template, target)
        except ValidationError as exc:
            raise ValidationError(f"frame {f}: {exc}") from exc
        frames.append(result.pose)
        residuals[f] = result.residuals
    return ClipSolveResult(
        clip=AnimationClip(fps=fps, frames=tuple(frames)),
        residuals=residuals,
        filled=filled,
    )
