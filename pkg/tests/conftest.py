import numpy as np
import pytest

from bimanual_safety.geometry import ArmPair, Joint, Pose, SerialChain, rotation_about
from bimanual_safety.observation import KeypointState, ObjectState, Observation


def random_rotation(rng) -> np.ndarray:
    axis = rng.normal(size=3)
    return rotation_about(axis / np.linalg.norm(axis), rng.uniform(-np.pi, np.pi))


def random_pose(rng, scale=0.5) -> Pose:
    return Pose(random_rotation(rng), rng.uniform(-scale, scale, 3))


def random_chain(rng, n_joints=None, name="arm") -> SerialChain:
    n = int(n_joints or rng.integers(1, 8))
    joints = []
    for _ in range(n):
        axis = rng.normal(size=3)
        joints.append(Joint(axis / np.linalg.norm(axis), random_pose(rng, 0.3), (-np.pi, np.pi)))
    return SerialChain(tuple(joints), random_pose(rng), random_pose(rng, 0.1), name)


def random_pair(rng, nl=None, nr=None) -> ArmPair:
    return ArmPair(random_chain(rng, nl, "left"), random_chain(rng, nr, "right"))


def make_obs(
    t=1,
    tips=None,
    prev_tips=None,
    closed=None,
    objects=(),
    keypoints=(),
    dual_grasp_width=None,
    tip_axes=None,
):
    """Hand-built observation; ``objects`` are ObjectState, ``keypoints`` KeypointState."""
    tips = {a: np.asarray(v, float) for a, v in (tips or {"left": (0, 0.3, 0.3), "right": (0, -0.3, 0.3)}).items()}
    prev = {a: np.asarray(v, float) for a, v in (prev_tips or tips).items()}
    closed = closed or {"left": False, "right": False}
    axes = tip_axes or {"left": np.array([0.0, 0.0, -1.0]), "right": np.array([0.0, 0.0, -1.0])}
    return Observation(
        t=t,
        q={"left": np.zeros(4), "right": np.zeros(4)},
        tips=tips,
        tip_axes={a: np.asarray(v, float) for a, v in axes.items()},
        prev_tips=prev,
        widths={a: 0.0 if c else 0.08 for a, c in closed.items()},
        closed=closed,
        objects={o.id: o for o in objects},
        keypoints={k.id: k for k in keypoints},
        dual_grasp_width=dual_grasp_width,
    )


def obj(id, center, radius=0.04, holders=(), prev=None, axis=(0, 0, 1)):
    c = np.asarray(center, float)
    return ObjectState(id, c, radius, np.asarray(axis, float), tuple(holders),
                       c.copy() if prev is None else np.asarray(prev, float))


def kp(id, xyz, object_id, label=""):
    return KeypointState(id, np.asarray(xyz, float), object_id, label)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
