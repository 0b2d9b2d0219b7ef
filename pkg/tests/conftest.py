import numpy as np
import pytest

from animaxkit import quat
from animaxkit.skeleton import JointDef, Pose, Skeleton


def chain_skeleton(n_joints: int, rng: np.random.Generator | None = None) -> Skeleton:
    """Simple chain; deterministic offsets unless an rng is given."""
    joints = [JointDef("j0", None, np.zeros(3))]
    for i in range(1, n_joints):
        if rng is None:
            offset = np.array([0.1 * i, 1.0, 0.05 * (i % 3)])
        else:
            offset = rng.uniform(-1.0, 1.0, 3)
            while np.linalg.norm(offset) < 0.3:
                offset = rng.uniform(-1.0, 1.0, 3)
        joints.append(JointDef(f"j{i}", i - 1, offset))
    return Skeleton(joints=tuple(joints))


def branching_skeleton(rng: np.random.Generator) -> Skeleton:
    """Small tree: root with two limbs of two bones each plus a head."""
    def off():
        v = rng.uniform(-1.0, 1.0, 3)
        while np.linalg.norm(v) < 0.3:
            v = rng.uniform(-1.0, 1.0, 3)
        return v

    joints = (
        JointDef("root", None, np.zeros(3)),
        JointDef("spine", 0, off()),
        JointDef("l1", 1, off()),
        JointDef("l2", 2, off()),
        JointDef("r1", 1, off()),
        JointDef("r2", 4, off()),
        JointDef("head", 1, off()),
    )
    return Skeleton(joints=joints)


def random_pose(skeleton: Skeleton, rng: np.random.Generator, max_angle: float = np.pi) -> Pose:
    n = skeleton.joint_count
    rotations = np.empty((n, 4))
    for i in range(n):
        axis = rng.standard_normal(3)
        axis /= np.linalg.norm(axis)
        rotations[i] = quat.from_axis_angle(axis, rng.uniform(-max_angle, max_angle))
    return Pose(rotations=rotations, root_translation=rng.uniform(-0.5, 0.5, 3))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
