"""Skeletal animation toolkit: multi-view pose-map rendering, triangulation
and IK based clip reconstruction, and a toy multi-view video-pose diffusion
model with shared positional encodings."""

from .errors import NumericalError, ToolkitError, ValidationError
from .skeleton import (
    AnimationClip,
    JointDef,
    JointPositions3D,
    Pose,
    Skeleton,
    bone_lengths,
    forward_kinematics,
    load_clip,
    load_skeleton,
    save_clip,
    save_skeleton,
)
from .camera import Camera, PluckerMap, canonical_rig, plucker_map, project
from .posemap import ColorPalette, Joints2D, PoseMap, decode_posemap, make_palette, render_posemap
from .reconstruct import (
    TriangulationProblem,
    TriangulationResult,
    dlt_triangulate,
    refine,
    triangulate_frame,
)
from .kinematics import IkFrameResult, rotation_between, solve_clip, solve_frame
from .datakit import ClipRecord, SamplerConfig, filter_clip, synth_dataset, weighted_sampler

__version__ = "0.1.0"

__all__ = [
    "AnimationClip",
    "Camera",
    "ClipRecord",
    "ColorPalette",
    "IkFrameResult",
    "JointDef",
    "JointPositions3D",
    "Joints2D",
    "NumericalError",
    "PluckerMap",
    "Pose",
    "PoseMap",
    "SamplerConfig",
    "Skeleton",
    "ToolkitError",
    "TriangulationProblem",
    "TriangulationResult",
    "ValidationError",
    "bone_lengths",
    "canonical_rig",
    "decode_posemap",
    "dlt_triangulate",
    "filter_clip",
    "forward_kinematics",
    "load_clip",
    "load_skeleton",
    "make_palette",
    "plucker_map",
    "project",
    "refine",
    "render_posemap",
    "rotation_between",
    "save_clip",
    "save_skeleton",
    "solve_clip",
    "solve_frame",
    "synth_dataset",
    "triangulate_frame",
    "weighted_sampler",
]
