import numpy as np
import pytest

from animaxkit.camera import canonical_rig, framing_distance, project_points
from animaxkit.errors import ValidationError
from animaxkit.posemap import Joints2D
from animaxkit.reconstruct import (
    TriangulationProblem,
    dlt_triangulate,
    initial_positions,
    pixels_per_unit,
    refine,
    triangulate_frame,
)
from animaxkit.skeleton import (
    JointPositions3D,
    Skeleton,
    bone_lengths,
    forward_kinematics,
)
from conftest import chain_skeleton, random_pose


RIG = canonical_rig(framing_distance(1.0, fill=0.75), 512)


def observe(positions: np.ndarray, cameras=RIG, noise=0.0, rng=None,
            invalid: dict[int, list[int]] | None = None) -> list[Joints2D]:
    """Exact (non-rasterized) projections, optionally perturbed."""
    obs = []
    for v, cam in enumerate(cameras):
        uv, depth = project_points(cam, positions)
        if noise > 0:
            uv = uv + rng.normal(0.0, noise, uv.shape)
        valid = depth > 0
        if invalid and v in invalid:
            valid = valid.copy()
            valid[invalid[v]] = False
        obs.append(Joints2D(coords=uv, valid=valid))
    return obs


def scene_skeleton(n_joints: int, rng) -> Skeleton:
    """Random chain scaled to fit comfortably inside the rig's view."""
    from animaxkit.skeleton import JointDef, rest_positions

    sk = chain_skeleton(n_joints, rng)
    rest = rest_positions(sk).positions
    scale = 0.7 / max(float(np.linalg.norm(rest, axis=1).max()), 1e-9)
    joints = tuple(
        JointDef(j.name, j.parent, j.rest_offset * scale) for j in sk.joints
    )
    return Skeleton(joints=joints)


def posed_positions(skeleton: Skeleton, rng, max_angle=0.6) -> np.ndarray:
    pose = random_pose(skeleton, rng, max_angle=max_angle)
    return forward_kinematics(skeleton, pose).positions


class TestDlt:
    def test_origin_from_all_views(self):
        obs = observe(np.zeros((1, 3)))
        point = dlt_triangulate(obs, RIG, 0)
        np.testing.assert_allclose(point, np.zeros(3), atol=1e-9)

    def test_exact_two_view_recovery(self, rng):
        for _ in range(20):
            target = rng.uniform(-0.8, 0.8, (1, 3))
            obs = observe(target, cameras=RIG[:2])
            point = dlt_triangulate(obs, RIG[:2], 0)
            assert np.linalg.norm(point - target[0]) <= 1e-7 * max(1.0, np.linalg.norm(target))

    def test_monte_carlo_noise_bound(self, rng):
        """0.5 px noise: error stays below 10x the single-ray back-projection
        uncertainty at the rig distance."""
        distance = 3.0
        rig = canonical_rig(distance, 512)
        single_ray = 0.5 * distance / rig[0].fx
        worst = 0.0
        for _ in range(1000):
            target = rng.uniform(-0.5, 0.5, (1, 3))
            obs = observe(target, cameras=rig, noise=0.5, rng=rng)
            point = dlt_triangulate(obs, rig, 0)
            worst = max(worst, float(np.linalg.norm(point - target[0])))
        assert worst < 10.0 * single_ray

    def test_underdetermined_raises(self):
        obs = observe(np.zeros((1, 3)), invalid={1: [0], 2: [0], 3: [0]})
        with pytest.raises(ValidationError, match="fewer than 2"):
            dlt_triangulate(obs, RIG, 0)


class TestRefine:
    def test_exact_observations_reach_ground_truth(self, rng):
        sk = scene_skeleton(5, rng)
        gt = posed_positions(sk, rng)
        problem = TriangulationProblem(
            observations=observe(gt), cameras=RIG, skeleton=sk, lambda_bone=0.0
        )
        start = JointPositions3D.all_valid(gt + rng.normal(0, 0.05, gt.shape))
        result = refine(problem, start)
        assert result.final_cost < 1e-12
        assert np.abs(result.positions.positions - gt).max() < 1e-6

    def test_strong_bone_weight_enforces_lengths(self, rng):
        sk = scene_skeleton(6, rng)
        gt = posed_positions(sk, rng)
        problem = TriangulationProblem(
            observations=observe(gt, noise=1.0, rng=rng),
            cameras=RIG,
            skeleton=sk,
            lambda_bone=1e3,
        )
        result = triangulate_frame(problem)
        rest = bone_lengths(sk)
        recon = result.positions.positions
        for b, j in enumerate(sk.non_root_indices()):
            p = sk.joints[j].parent
            length = np.linalg.norm(recon[j] - recon[p])
            assert abs(length - rest[b]) / rest[b] < 0.01

    def test_cost_monotone_from_init(self, rng):
        for _ in range(10):
            sk = scene_skeleton(4, rng)
            gt = posed_positions(sk, rng)
            problem = TriangulationProblem(
                observations=observe(gt, noise=2.0, rng=rng), cameras=RIG, skeleton=sk
            )
            init = initial_positions(problem)
            from animaxkit.reconstruct import _residuals_and_jacobian

            scale = pixels_per_unit(RIG, init.positions.mean(axis=0))
            res0, _ = _residuals_and_jacobian(problem, init.positions, scale, with_jacobian=False)
            result = refine(problem, init)
            assert result.final_cost <= float(res0 @ res0) + 1e-12

    def test_two_joint_grid_search_oracle(self, rng):
        """LM lands at or below the best cost on a local 1e-3-step grid."""
        sk = scene_skeleton(2, rng)
        gt = posed_positions(sk, rng)
        problem = TriangulationProblem(
            observations=observe(gt, noise=1.0, rng=rng),
            cameras=RIG,
            skeleton=sk,
            lambda_bone=100.0,
        )
        result = triangulate_frame(problem)
        scale = pixels_per_unit(RIG, result.positions.positions.mean(axis=0))
        rest_len = float(bone_lengths(sk)[0])

        def cost(p0: np.ndarray, p1: np.ndarray) -> np.ndarray:
            total = 0.0
            for obs, cam in zip(problem.observations, problem.cameras):
                for pts, j in ((p0, 0), (p1, 1)):
                    cam_pts = pts @ cam.rotation.T + cam.translation
                    u = cam.fx * cam_pts[..., 0] / cam_pts[..., 2] + cam.cx
                    v = cam.fy * cam_pts[..., 1] / cam_pts[..., 2] + cam.cy
                    total = total + (u - obs.coords[j, 0]) ** 2 + (v - obs.coords[j, 1]) ** 2
            bone = np.linalg.norm(p0 - p1, axis=-1) - rest_len
            return total + 100.0 * (scale * bone) ** 2

        # enumerate a +-2e-3 cube (step 1e-3) around the LM solution per joint
        steps = np.arange(-2, 3) * 1e-3
        offs = np.stack(np.meshgrid(steps, steps, steps, indexing="ij"), axis=-1).reshape(-1, 3)
        c0 = result.positions.positions[0] + offs  # (125, 3)
        c1 = result.positions.positions[1] + offs
        grid_costs = cost(c0[:, None, :], c1[None, :, :])
        lm_cost = float(
            cost(result.positions.positions[0][None], result.positions.positions[1][None])[0]
        )
        assert lm_cost <= grid_costs.min() + 1e-9

    def test_non_finite_init_rejected(self, rng):
        sk = scene_skeleton(3, rng)
        gt = posed_positions(sk, rng)
        problem = TriangulationProblem(observations=observe(gt), cameras=RIG, skeleton=sk)
        bad = gt.copy()
        bad[0, 0] = np.nan
        with pytest.raises(ValidationError, match="finite"):
            refine(problem, JointPositions3D.all_valid(bad))


class TestTriangulateFrame:
    def test_full_exact_observations(self, rng):
        sk = scene_skeleton(6, rng)
        gt = posed_positions(sk, rng)
        problem = TriangulationProblem(observations=observe(gt), cameras=RIG, skeleton=sk)
        result = triangulate_frame(problem)
        assert result.reproj_rms_px < 1e-6
        assert result.converged

    def test_three_views_still_reconstructs(self, rng):
        sk = scene_skeleton(5, rng)
        gt = posed_positions(sk, rng)
        full = triangulate_frame(
            TriangulationProblem(
                observations=observe(gt, noise=0.5, rng=np.random.default_rng(0)),
                cameras=RIG, skeleton=sk,
            )
        )
        three = triangulate_frame(
            TriangulationProblem(
                observations=observe(gt, noise=0.5, rng=np.random.default_rng(0),
                                     cameras=RIG[:3]),
                cameras=RIG[:3], skeleton=sk,
            )
        )
        err_full = np.abs(full.positions.positions - gt).max()
        err_three = np.abs(three.positions.positions - gt).max()
        assert err_three < 0.05
        assert err_full < err_three * 3 + 1e-3  # dropping a view cannot help much
        rest = bone_lengths(sk)
        recon = three.positions.positions
        for b, j in enumerate(sk.non_root_indices()):
            p = sk.joints[j].parent
            assert abs(np.linalg.norm(recon[j] - recon[p]) - rest[b]) / rest[b] < 0.02

    def test_under_observed_joint_recovered_by_bone_prior(self, rng):
        for trial in range(10):
            sk = scene_skeleton(5, rng)
            gt = posed_positions(sk, rng)
            hidden = 3
            problem = TriangulationProblem(
                observations=observe(gt, invalid={0: [hidden], 1: [hidden], 2: [hidden]}),
                cameras=RIG,
                skeleton=sk,
                lambda_bone=100.0,
            )
            result = triangulate_frame(problem)
            bbox = gt.max(axis=0) - gt.min(axis=0)
            err = np.linalg.norm(result.positions.positions[hidden] - gt[hidden])
            assert err < 0.05 * np.linalg.norm(bbox)

    def test_all_invalid_raises(self, rng):
        sk = scene_skeleton(3, rng)
        gt = posed_positions(sk, rng)
        obs = observe(gt, invalid={v: [0, 1, 2] for v in range(4)})
        problem = TriangulationProblem(observations=obs, cameras=RIG, skeleton=sk)
        with pytest.raises(ValidationError, match="invalid in all views"):
            triangulate_frame(problem)

    def test_rotation_equivariance(self, rng):
        sk = scene_skeleton(4, rng)
        gt = posed_positions(sk, rng)
        angle = 0.7
        rot = np.array(
            [[np.cos(angle), -np.sin(angle), 0.0],
             [np.sin(angle), np.cos(angle), 0.0],
             [0.0, 0.0, 1.0]]
        )
        rig_rotated = [
            type(c)(
                rotation=c.rotation @ rot.T, translation=c.translation,
                fx=c.fx, fy=c.fy, cx=c.cx, cy=c.cy, width=c.width, height=c.height,
            )
            for c in RIG
        ]
        base = triangulate_frame(
            TriangulationProblem(observations=observe(gt), cameras=RIG, skeleton=sk)
        )
        rotated = triangulate_frame(
            TriangulationProblem(
                observations=observe(gt @ rot.T, cameras=rig_rotated),
                cameras=rig_rotated, skeleton=sk,
            )
        )
        np.testing.assert_allclose(
            rotated.positions.positions, base.positions.positions @ rot.T, atol=1e-6
        )

    def test_bit_identical_across_runs(self, rng):
        sk = scene_skeleton(5, rng)
        gt = posed_positions(sk, rng)
        obs = observe(gt, noise=1.0, rng=np.random.default_rng(42))
        problem = TriangulationProblem(observations=obs, cameras=RIG, skeleton=sk)
        a = triangulate_frame(problem)
        b = triangulate_frame(problem)
        assert np.array_equal(a.positions.positions, b.positions.positions)
        assert a.final_cost == b.final_cost and a.iterations == b.iterations
