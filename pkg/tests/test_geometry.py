import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from bimanual_safety.errors import ContractError
from bimanual_safety.geometry import (
    ArmPair, Joint, Pose, SerialChain, approach_axis, fk, fk_jacobian, rotation_about, solve_ik, tip_pose,
    transform_point,
)

from conftest import random_chain, random_pose

Z = np.array([0.0, 0.0, 1.0])


def planar2() -> SerialChain:
    link = Pose.from_translation((1.0, 0.0, 0.0))
    return SerialChain((Joint(Z, link), Joint(Z, link)))


def hat(w):
    return np.array([[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]])


def oracle_fk(chain: SerialChain, q) -> np.ndarray:
    """Sequential 4x4 products; joint rotations via the matrix exponential."""
    T = chain.base.as_matrix()
    for joint, angle in zip(chain.joints, q):
        R = np.eye(4)
        R[:3, :3] = expm(hat(joint.axis) * angle)
        T = T @ R @ joint.offset.as_matrix()
    return T


def fd_jacobian(chain, q, h=1e-6):
    cols = []
    for j in range(len(q)):
        dq = np.zeros_like(q)
        dq[j] = h
        p, m = tip_pose(chain, q + dq), tip_pose(chain, q - dq)
        lin = (p.translation - m.translation) / (2 * h)
        dR = (p.rotation - m.rotation) / (2 * h) @ tip_pose(chain, q).rotation.T
        ang = np.array([dR[2, 1], dR[0, 2], dR[1, 0]])
        cols.append(np.concatenate([lin, ang]))
    return np.array(cols).T


def test_planar_examples():
    chain = planar2()
    assert np.allclose(fk(chain, [0.0, 0.0]).translation, [2, 0, 0], atol=1e-12)
    assert np.allclose(fk(chain, [np.pi / 2, 0.0]).translation, [0, 2, 0], atol=1e-12)
    assert np.allclose(fk_jacobian(chain, [0.0, 0.0])[:3, 0], [0, 2, 0], atol=1e-12)


def test_fk_matches_matrix_oracle(rng):
    for _ in range(50):
        chain = random_chain(rng, 7)
        q = rng.uniform(-np.pi, np.pi, 7)
        assert np.allclose(fk(chain, q).as_matrix(), oracle_fk(chain, q), atol=1e-10, rtol=0)


def test_jacobian_matches_finite_differences(rng):
    for _ in range(30):
        chain = random_chain(rng)
        q = rng.uniform(-2.5, 2.5, chain.n_joints)
        assert np.allclose(fk_jacobian(chain, q), fd_jacobian(chain, q), atol=1e-5, rtol=0)


def test_locked_joint_keeps_its_column():
    chain = SerialChain((Joint(Z, Pose.from_translation((1, 0, 0)), (0.3, 0.3)),
                         Joint(Z, Pose.from_translation((1, 0, 0)))))
    jac = fk_jacobian(chain, [0.3, 0.0])
    assert jac.shape == (6, 2)
    assert np.linalg.norm(jac[:, 0]) > 0


def test_contract_violations():
    chain = planar2()
    with pytest.raises(ContractError):
        fk(chain, [0.0])
    with pytest.raises(ContractError):
        fk(chain, [np.nan, 0.0])
    with pytest.raises(ContractError):
        Joint(np.array([1.0, 1.0, 0.0]))
    with pytest.raises(ContractError):
        Joint(Z, limits=(1.0, -1.0))
    with pytest.raises(ContractError):
        Pose(np.diag([1.0, 1.0, -1.0]))


def test_transform_point_and_axis_examples():
    assert np.allclose(transform_point(Pose(), (1, 2, 3)), (1, 2, 3))
    assert np.allclose(transform_point(Pose.from_translation((0, 0, 1)), (0, 0, 0)), (0, 0, 1))
    rz = Pose(rotation_about(Z, np.pi / 2))
    assert np.allclose(transform_point(rz, (1, 0, 0)), (0, 1, 0), atol=1e-12)
    assert np.allclose(approach_axis(Pose()), (0, 0, 1))
    rx = Pose(rotation_about(np.array([1.0, 0, 0]), np.pi / 2))
    assert np.allclose(approach_axis(rx), (0, -1, 0), atol=1e-12)


seeds = st.integers(0, 2**32 - 1)


@settings(max_examples=60, deadline=None)
@given(seeds)
def test_pose_group_laws(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (random_pose(rng) for _ in range(3))
    assert (a @ a.inverse()).allclose(Pose(), 1e-9)
    assert (a.inverse() @ a).allclose(Pose(), 1e-9)
    assert ((a @ b) @ c).allclose(a @ (b @ c), 1e-9)
    assert (a @ Pose()).allclose(a, 1e-12)
    ab = a @ b
    assert np.max(np.abs(ab.rotation @ ab.rotation.T - np.eye(3))) < 1e-9
    assert abs(np.linalg.norm(approach_axis(a)) - 1) < 1e-12


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_approach_axis_is_covariant_under_base_rotation(seed):
    rng = np.random.default_rng(seed)
    chain = random_chain(rng)
    q = rng.uniform(-np.pi, np.pi, chain.n_joints)
    R = Pose(random_pose(rng).rotation)
    rotated = SerialChain(chain.joints, R @ chain.base, chain.tip)
    assert np.allclose(approach_axis(tip_pose(rotated, q)), R.rotation @ approach_axis(tip_pose(chain, q)),
                       atol=1e-9)


def test_solve_ik_reaches_reachable_target(rng):
    chain = random_chain(rng, 6)
    q_true = rng.uniform(-1, 1, 6)
    target = tip_pose(chain, q_true).translation
    q = solve_ik(chain, target, q_true + rng.normal(0, 0.1, 6), iterations=500)
    assert np.linalg.norm(tip_pose(chain, q).translation - target) < 1e-5


def test_arm_pair_row_layout(rng):
    pair = ArmPair(random_chain(rng, 3, "left"), random_chain(rng, 5, "right"))
    assert pair.action_dim == 10
    row = pair.join(np.arange(3), np.arange(3, 8), 8.0, 9.0)
    ql, qr, gl, gr = pair.split(row)
    assert ql.tolist() == [0, 1, 2] and qr.tolist() == [3, 4, 5, 6, 7] and (gl, gr) == (8.0, 9.0)
    assert pair.gripper_column("left") == 8 and pair.gripper_column("right") == 9
