"""Lift multi-view 2D joint observations to 3D joint positions.

Per frame: a linear DLT initializer per joint, then a damped Gauss-Newton
(Levenberg-Marquardt) refinement of all joints jointly, minimizing

    E = sum_views sum_joints w_vj * ||project(C_v, P_j) - p_vj||^2
        + lambda_bone * sum_bones (s * (||P_parent - P_child|| - L_bone))^2

where L_bone are the skeleton's rest lengths and ``s`` converts model units
to pixels (mean focal length over mean camera distance to the scene), so
``lambda_bone`` weighs the two terms in commensurate pixel units.

Damping follows the classic Marquardt schedule: initial mu is 1e-3 times
the largest diagonal of J^T J, doubled on a rejected step, divided by 3 on
an accepted one. Iterations stop on a relative cost decrease below 1e-10,
a gradient infinity-norm below 1e-10, or after 200 trial steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import Camera
from .errors import NumericalError, ValidationError
from .posemap import Joints2D
from .skeleton import JointPositions3D, Skeleton, bone_lengths, rest_positions

DEFAULT_LAMBDA_BONE = 100.0
MAX_ITERATIONS = 200
COST_TOL = 1e-10
GRAD_TOL = 1e-10


@dataclass(frozen=True)
class TriangulationProblem:
    observations: list[Joints2D]  # one per view
    cameras: list[Camera]
    skeleton: Skeleton
    lambda_bone: float = DEFAULT_LAMBDA_BONE
    weights: np.ndarray | None = None  # (views, joints); defaults to validity flags

    def __post_init__(self):
        if len(self.cameras) < 2 or len(self.observations) != len(self.cameras):
            raise ValidationError("need at least 2 views with matching observations")
        n = self.skeleton.joint_count
        for obs in self.observations:
            if obs.coords.shape[0] != n:
                raise ValidationError("observation count per view must equal joint count")
        if self.lambda_bone < 0:
            raise ValidationError("lambda_bone must be nonnegative")
        if self.weights is None:
            w = np.stack([obs.valid.astype(np.float64) for obs in self.observations])
        else:
            w = np.asarray(self.weights, dtype=np.float64)
            if w.shape != (len(self.cameras), n):
                raise ValidationError("weights must have shape (views, joints)")
            w = w * np.stack([obs.valid.astype(np.float64) for obs in self.observations])
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class TriangulationResult:
    positions: JointPositions3D
    reproj_rms_px: float
    bone_rms: float
    iterations: int
    converged: bool
    final_cost: float = field(default=np.nan)


def dlt_triangulate(observations: list[Joints2D], cameras: list[Camera], joint: int) -> np.ndarray:
    """Linear least-squares point from all views observing ``joint``.

    Stacks two homogeneous rows per valid view from the projection
    matrices and takes the smallest right singular vector.
    """
    rows = []
    for obs, cam in zip(observations, cameras):
        if not obs.valid[joint]:
            continue
        u, v = obs.coords[joint]
        p = cam.projection_matrix()
        rows.append(u * p[2] - p[0])
        rows.append(v * p[2] - p[1])
    if len(rows) < 4:
        raise ValidationError(f"joint {joint} is valid in fewer than 2 views")
    a = np.stack(rows)
    _, _, vt = np.linalg.svd(a)
    h = vt[-1]
    if abs(h[3]) < 1e-15:
        raise NumericalError(f"DLT produced a point at infinity for joint {joint}")
    return h[:3] / h[3]


def pixels_per_unit(cameras: list[Camera], scene_center: np.ndarray) -> float:
    """Approximate image-pixels per model-unit at the scene center."""
    scales = []
    for cam in cameras:
        dist = float(np.linalg.norm(cam.center() - scene_center))
        scales.append(0.5 * (cam.fx + cam.fy) / max(dist, 1e-9))
    return float(np.mean(scales))


def _residuals_and_jacobian(
    problem: TriangulationProblem,
    positions: np.ndarray,
    bone_scale: float,
    with_jacobian: bool = True,
) -> tuple[np.ndarray, np.ndarray | None]:
    n = problem.skeleton.joint_count
    children = problem.skeleton.non_root_indices()
    lengths = bone_lengths(problem.skeleton)
    n_obs = int(np.count_nonzero(problem.weights))
    n_res = 2 * n_obs + (len(children) if problem.lambda_bone > 0 else 0)
    res = np.zeros(n_res)
    jac = np.zeros((n_res, 3 * n)) if with_jacobian else None

    row = 0
    for v, (obs, cam) in enumerate(zip(problem.observations, problem.cameras)):
        w = problem.weights[v]
        active = np.nonzero(w)[0]
        if active.size == 0:
            continue
        pts = positions[active]
        cam_pts = pts @ cam.rotation.T + cam.translation
        x, y, z = cam_pts[:, 0], cam_pts[:, 1], cam_pts[:, 2]
        z = np.where(np.abs(z) < 1e-12, 1e-12, z)
        u = cam.fx * x / z + cam.cx
        vv = cam.fy * y / z + cam.cy
        sw = np.sqrt(w[active])
        m = active.size
        rows_u = row + 2 * np.arange(m)
        res[rows_u] = sw * (u - obs.coords[active, 0])
        res[rows_u + 1] = sw * (vv - obs.coords[active, 1])
        if with_jacobian:
            r0, r1, r2 = cam.rotation
            du = (sw * cam.fx / (z * z))[:, None] * (np.outer(z, r0) - x[:, None] * r2)
            dv = (sw * cam.fy / (z * z))[:, None] * (np.outer(z, r1) - y[:, None] * r2)
            cols = (3 * active[:, None] + np.arange(3)).ravel()
            jac[np.repeat(rows_u, 3), cols] = du.ravel()
            jac[np.repeat(rows_u + 1, 3), cols] = dv.ravel()
        row += 2 * m

    if problem.lambda_bone > 0:
        coef = np.sqrt(problem.lambda_bone) * bone_scale
        child_idx = np.array(children)
        parent_idx = np.array([problem.skeleton.joints[j].parent for j in children])
        delta = positions[parent_idx] - positions[child_idx]
        dist = np.linalg.norm(delta, axis=1)
        rows_b = row + np.arange(len(children))
        res[rows_b] = coef * (dist - lengths)
        if with_jacobian:
            direction = delta / np.maximum(dist, 1e-12)[:, None]
            pcols = (3 * parent_idx[:, None] + np.arange(3)).ravel()
            ccols = (3 * child_idx[:, None] + np.arange(3)).ravel()
            jac[np.repeat(rows_b, 3), pcols] = coef * direction.ravel()
            jac[np.repeat(rows_b, 3), ccols] = -coef * direction.ravel()
        row += len(children)
    return res, jac


def _metrics(problem: TriangulationProblem, positions: np.ndarray) -> tuple[float, float]:
    sq = []
    for v, (obs, cam) in enumerate(zip(problem.observations, problem.cameras)):
        w = problem.weights[v]
        active = np.nonzero(w)[0]
        if active.size == 0:
            continue
        cam_pts = positions[active] @ cam.rotation.T + cam.translation
        z = np.where(np.abs(cam_pts[:, 2]) < 1e-12, 1e-12, cam_pts[:, 2])
        u = cam.fx * cam_pts[:, 0] / z + cam.cx
        vv = cam.fy * cam_pts[:, 1] / z + cam.cy
        err = np.stack([u, vv], axis=1) - obs.coords[active]
        sq.extend((err**2).sum(axis=1).tolist())
    reproj_rms = float(np.sqrt(np.mean(sq))) if sq else 0.0
    lengths = bone_lengths(problem.skeleton)
    deltas = []
    for b, j in enumerate(problem.skeleton.non_root_indices()):
        p = problem.skeleton.joints[j].parent
        deltas.append(float(np.linalg.norm(positions[p] - positions[j])) - lengths[b])
    bone_rms = float(np.sqrt(np.mean(np.square(deltas)))) if deltas else 0.0
    return reproj_rms, bone_rms


def refine(problem: TriangulationProblem, init: JointPositions3D) -> TriangulationResult:
    """Levenberg-Marquardt refinement from an initial joint configuration."""
    positions = np.array(init.positions, dtype=np.float64)
    if not np.all(np.isfinite(positions)):
        raise ValidationError("initial positions must be finite")
    scene_center = positions.mean(axis=0)
    bone_scale = pixels_per_unit(problem.cameras, scene_center)

    res, jac = _residuals_and_jacobian(problem, positions, bone_scale)
    cost = float(res @ res)
    if not np.isfinite(cost):
        raise NumericalError(f"non-finite initial cost {cost}")
    jtj = jac.T @ jac
    grad = jac.T @ res
    mu = 1e-3 * float(np.max(np.diag(jtj))) if np.max(np.diag(jtj)) > 0 else 1e-3

    iterations = 0
    converged = False
    while iterations < MAX_ITERATIONS:
        if np.max(np.abs(grad)) < GRAD_TOL:
            converged = True
            break
        iterations += 1
        try:
            step = np.linalg.solve(jtj + mu * np.eye(jtj.shape[0]), -grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(jtj + mu * np.eye(jtj.shape[0]), -grad, rcond=None)[0]
        candidate = positions + step.reshape(-1, 3)
        cand_res, cand_jac = _residuals_and_jacobian(problem, candidate, bone_scale)
        cand_cost = float(cand_res @ cand_res)
        if not np.isfinite(cand_cost):
            raise NumericalError(
                f"non-finite cost at iteration {iterations} (mu={mu:.3g})"
            )
        if cand_cost < cost:
            rel_decrease = (cost - cand_cost) / max(cost, 1e-300)
            positions, res, jac, cost = candidate, cand_res, cand_jac, cand_cost
            jtj = jac.T @ jac
            grad = jac.T @ res
            mu /= 3.0
            if rel_decrease < COST_TOL:
                converged = True
                break
        else:
            mu *= 2.0

    reproj_rms, bone_rms = _metrics(problem, positions)
    return TriangulationResult(
        positions=JointPositions3D(positions, init.valid.copy()),
        reproj_rms_px=reproj_rms,
        bone_rms=bone_rms,
        iterations=iterations,
        converged=converged,
        final_cost=cost,
    )


def initial_positions(problem: TriangulationProblem) -> JointPositions3D:
    """DLT per joint; under-observed joints fall back to the kinematic prior
    (parent position plus unrotated rest offset)."""
    n = problem.skeleton.joint_count
    observed = (problem.weights > 0).sum(axis=0)
    if int(observed.sum()) == 0:
        raise ValidationError("all joints are invalid in all views")
    positions = np.zeros((n, 3))
    solved = np.zeros(n, dtype=bool)
    rest = rest_positions(problem.skeleton).positions
    for j in range(n):
        if observed[j] >= 2:
            positions[j] = dlt_triangulate(problem.observations, problem.cameras, j)
            solved[j] = True
    for j, joint in enumerate(problem.skeleton.joints):
        if solved[j]:
            continue
        if joint.parent is not None:
            positions[j] = positions[joint.parent] + joint.rest_offset
        elif solved.any():
            # unobserved root: translate its rest position by the mean offset
            # of the triangulated joints from their rest positions
            shift = (positions[solved] - rest[solved]).mean(axis=0)
            positions[j] = rest[j] + shift
        else:
            positions[j] = rest[j]
        solved[j] = True
    return JointPositions3D.all_valid(positions)


def triangulate_frame(problem: TriangulationProblem) -> TriangulationResult:
    """DLT initialization followed by LM refinement; deterministic."""
    return refine(problem, initial_positions(problem))
