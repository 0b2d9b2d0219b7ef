"""Skeleton and animation data model with forward kinematics.

Conventions:
  - Joints are the head positions of bones. A joint's ``rest_offset`` is the
    position of its head relative to its parent's head in the rest pose; the
    root's offset is ignored by forward kinematics (the root sits exactly at
    the pose's ``root_translation``).
  - Local rotations compose in the parent frame:
    ``global_j = global_parent * local_j``.
  - Joints must be stored in topological order (parent index < own index),
    and indices are preserved verbatim through file round trips.

JSON interchange formats:
  Skeleton: ``{"joints": [{"name": str, "parent": int|null,
  "rest_offset": [x, y, z]}, ...]}``
  Clip: ``{"fps": float, "frames": [{"root_translation": [x, y, z],
  "rotations": [[w, x, y, z], ...]}, ...]}``
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import quat
from .errors import ValidationError

QUAT_NORM_TOL = 1e-9


def _as_readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class JointDef:
    name: str
    parent: int | None
    rest_offset: np.ndarray

    def __post_init__(self):
        offset = np.asarray(self.rest_offset, dtype=np.float64)
        if offset.shape != (3,):
            raise ValidationError(f"joint {self.name!r}: rest_offset must be a 3-vector")
        object.__setattr__(self, "rest_offset", _as_readonly(offset))


@dataclass(frozen=True)
class Skeleton:
    joints: tuple[JointDef, ...]
    root_index: int = 0

    def __post_init__(self):
        joints = tuple(self.joints)
        object.__setattr__(self, "joints", joints)
        if not joints:
            raise ValidationError("skeleton must have at least one joint")
        roots = [i for i, j in enumerate(joints) if j.parent is None]
        if len(roots) != 1:
            raise ValidationError(f"skeleton must have exactly one root joint, found {len(roots)}")
        if roots[0] != self.root_index:
            raise ValidationError(
                f"root_index {self.root_index} does not match the parentless joint {roots[0]}"
            )
        names = set()
        for i, j in enumerate(joints):
            if j.name in names:
                raise ValidationError(f"duplicate joint name {j.name!r}")
            names.add(j.name)
            if j.parent is None:
                continue
            if not 0 <= j.parent < len(joints) or j.parent >= i:
                raise ValidationError(
                    f"topological-order violated: joint {i} ({j.name!r}) has parent {j.parent}"
                )
            if float(np.linalg.norm(j.rest_offset)) <= 0.0:
                raise ValidationError(f"bone rest length must be positive for joint {j.name!r}")

    @property
    def joint_count(self) -> int:
        return len(self.joints)

    @property
    def parents(self) -> list[int | None]:
        return [j.parent for j in self.joints]

    def children_of(self, index: int) -> list[int]:
        return [i for i, j in enumerate(self.joints) if j.parent == index]

    def non_root_indices(self) -> list[int]:
        return [i for i, j in enumerate(self.joints) if j.parent is not None]


@dataclass(frozen=True)
class Pose:
    """Per-joint local rotations (unit wxyz quaternions) plus root translation."""

    rotations: np.ndarray
    root_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rot = np.asarray(self.rotations, dtype=np.float64)
        if rot.ndim != 2 or rot.shape[1] != 4:
            raise ValidationError("pose rotations must have shape (joints, 4)")
        norms = np.linalg.norm(rot, axis=1)
        bad = np.nonzero(np.abs(norms - 1.0) > QUAT_NORM_TOL)[0]
        if bad.size:
            raise ValidationError(
                f"non-unit quaternion at joint {int(bad[0])} (norm {norms[bad[0]]:.6g})"
            )
        trans = np.asarray(self.root_translation, dtype=np.float64)
        if trans.shape != (3,):
            raise ValidationError("root_translation must be a 3-vector")
        object.__setattr__(self, "rotations", _as_readonly(rot))
        object.__setattr__(self, "root_translation", _as_readonly(trans))

    @property
    def joint_count(self) -> int:
        return self.rotations.shape[0]

    @staticmethod
    def identity(joint_count: int) -> "Pose":
        rot = np.tile(quat.IDENTITY, (joint_count, 1))
        return Pose(rotations=rot)


@dataclass(frozen=True)
class AnimationClip:
    fps: float
    frames: tuple[Pose, ...]

    def __post_init__(self):
        if self.fps <= 0:
            raise ValidationError("fps must be positive")
        frames = tuple(self.frames)
        object.__setattr__(self, "frames", frames)
        counts = {f.joint_count for f in frames}
        if len(counts) > 1:
            raise ValidationError(f"frames disagree on joint count: {sorted(counts)}")

    @property
    def frame_count(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class JointPositions3D:
    positions: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        val = np.asarray(self.valid, dtype=bool)
        if pos.ndim != 2 or pos.shape[1] != 3 or val.shape != (pos.shape[0],):
            raise ValidationError("positions must be (joints, 3) with matching validity flags")
        object.__setattr__(self, "positions", _as_readonly(pos))
        val = val.copy()
        val.setflags(write=False)
        object.__setattr__(self, "valid", val)

    @staticmethod
    def all_valid(positions: np.ndarray) -> "JointPositions3D":
        positions = np.asarray(positions, dtype=np.float64)
        return JointPositions3D(positions, np.ones(positions.shape[0], dtype=bool))


def forward_kinematics(skeleton: Skeleton, pose: Pose) -> JointPositions3D:
    """World positions of all joint heads for one pose.

    The root lands at ``root_translation``; each other joint at
    ``parent_position + global_parent_rotation @ rest_offset``.
    """
    if pose.joint_count != skeleton.joint_count:
        raise ValidationError(
            f"pose has {pose.joint_count} joints, skeleton has {skeleton.joint_count}"
        )
    n = skeleton.joint_count
    positions = np.zeros((n, 3), dtype=np.float64)
    globals_ = np.zeros((n, 4), dtype=np.float64)
    for i, joint in enumerate(skeleton.joints):
        if joint.parent is None:
            positions[i] = pose.root_translation
            globals_[i] = pose.rotations[i]
        else:
            p = joint.parent
            positions[i] = positions[p] + quat.rotate(globals_[p], joint.rest_offset)
            globals_[i] = quat.multiply(globals_[p], pose.rotations[i])
    return JointPositions3D.all_valid(positions)


def rest_positions(skeleton: Skeleton) -> JointPositions3D:
    """Rest-pose world positions (identity rotations, zero root translation)."""
    return forward_kinematics(skeleton, Pose.identity(skeleton.joint_count))


def bone_lengths(skeleton: Skeleton) -> np.ndarray:
    """Rest length of each bone, ordered by the non-root joint ordering."""
    return np.array(
        [np.linalg.norm(skeleton.joints[i].rest_offset) for i in skeleton.non_root_indices()]
    )


def bounding_box_diagonal(positions: np.ndarray) -> float:
    """Diagonal of the axis-aligned box around a (..., 3) point set."""
    pts = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))


# --- JSON interchange ---------------------------------------------------


def skeleton_to_dict(skeleton: Skeleton) -> dict:
    return {
        "joints": [
            {"name": j.name, "parent": j.parent, "rest_offset": j.rest_offset.tolist()}
            for j in skeleton.joints
        ]
    }


def skeleton_from_dict(data: dict) -> Skeleton:
    try:
        joints = tuple(
            JointDef(
                name=str(j["name"]),
                parent=None if j["parent"] is None else int(j["parent"]),
                rest_offset=np.asarray(j["rest_offset"], dtype=np.float64),
            )
            for j in data["joints"]
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed skeleton JSON: {exc}") from exc
    return Skeleton(joints=joints)


def save_skeleton(skeleton: Skeleton, path: str | Path) -> None:
    Path(path).write_text(json.dumps(skeleton_to_dict(skeleton), indent=2), encoding="utf-8")


def load_skeleton(path: str | Path) -> Skeleton:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed skeleton JSON in {path}: {exc}") from exc
    return skeleton_from_dict(data)


def clip_to_dict(clip: AnimationClip) -> dict:
    return {
        "fps": clip.fps,
        "frames": [
            {
                "root_translation": f.root_translation.tolist(),
                "rotations": f.rotations.tolist(),
            }
            for f in clip.frames
        ],
    }


def clip_from_dict(data: dict) -> AnimationClip:
    try:
        frames = tuple(
            Pose(
                rotations=np.asarray(f["rotations"], dtype=np.float64),
                root_translation=np.asarray(f["root_translation"], dtype=np.float64),
            )
            for f in data["frames"]
        )
        fps = float(data["fps"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed clip JSON: {exc}") from exc
    return AnimationClip(fps=fps, frames=frames)


def save_clip(clip: AnimationClip, path: str | Path) -> None:
    Path(path).write_text(json.dumps(clip_to_dict(clip), indent=2), encoding="utf-8")


def load_clip(path: str | Path) -> AnimationClip:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed clip JSON in {path}: {exc}") from exc
    return clip_from_dict(data)
