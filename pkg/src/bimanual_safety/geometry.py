"""Rigid transforms and forward kinematics for revolute serial chains.

A chain is described as ``base * prod_j(Rot(axis_j, q_j) * offset_j) * tip``:
each joint rotates about its axis (expressed in the frame left by the previous
link offset) and is followed by a fixed link offset. :func:`fk` returns the
flange pose (after the last offset); the gripper tip frame is ``fk(q) * tip``.
The approach axis of a frame is its z-axis.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ContractError

ORTHO_TOL = 1e-9
AXIS_TOL = 1e-12


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotation_about(axis: np.ndarray, angle) -> np.ndarray:
    """Rodrigues rotation; ``angle`` may be a scalar or a 1-D array (batched)."""
    k = skew(np.asarray(axis, dtype=float))
    kk = k @ k
    angle = np.asarray(angle, dtype=float)
    s = np.sin(angle)[..., None, None]
    c = np.cos(angle)[..., None, None]
    return np.eye(3) + s * k + (1.0 - c) * kk


def rpy_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Fixed-axis x-y-z rotation (R = Rz(yaw) Ry(pitch) Rx(roll))."""
    return (
        rotation_about(np.array([0.0, 0.0, 1.0]), yaw)
        @ rotation_about(np.array([0.0, 1.0, 0.0]), pitch)
        @ rotation_about(np.array([1.0, 0.0, 0.0]), roll)
    )


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``x -> rotation @ x + translation`` (meters)."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float)
        t = np.array(self.translation, dtype=float).reshape(-1)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ContractError("pose needs a 3x3 rotation and a 3-vector translation")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ContractError("pose entries must be finite")
        if np.max(np.abs(r @ r.T - np.eye(3))) > ORTHO_TOL or np.linalg.det(r) < 0:
            raise ContractError("rotation must be orthonormal with determinant +1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> Pose:
        return cls()

    @classmethod
    def from_translation(cls, xyz) -> Pose:
        return cls(np.eye(3), np.asarray(xyz, dtype=float))

    @classmethod
    def from_axis_angle(cls, axis, angle: float, xyz=(0.0, 0.0, 0.0)) -> Pose:
        axis = np.asarray(axis, dtype=float)
        return cls(rotation_about(axis / np.linalg.norm(axis), angle), np.asarray(xyz, float))

    @classmethod
    def from_xyz_rpy(cls, xyz=(0.0, 0.0, 0.0), rpy=(0.0, 0.0, 0.0)) -> Pose:
        return cls(rpy_matrix(*rpy), np.asarray(xyz, dtype=float))

    @classmethod
    def from_matrix(cls, m) -> Pose:
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def compose(self, other: Pose) -> Pose:
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def inverse(self) -> Pose:
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def apply(self, p) -> np.ndarray:
        return self.rotation @ np.asarray(p, dtype=float) + self.translation

    def __matmul__(self, other):
        if isinstance(other, Pose):
            return self.compose(other)
        return self.apply(other)

    def allclose(self, other: Pose, atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol, rtol=0)
            and np.allclose(self.translation, other.translation, atol=atol, rtol=0)
        )

    def __repr__(self) -> str:
        return f"Pose(t={np.round(self.translation, 6).tolist()})"


def transform_point(pose: Pose, p) -> np.ndarray:
    return pose.apply(p)


def approach_axis(pose: Pose) -> np.ndarray:
    """Tool z-axis of ``pose`` (third rotation column)."""
    return np.array(pose.rotation[:, 2])


@dataclass(frozen=True, eq=False)
class Joint:
    axis: np.ndarray
    offset: Pose = field(default_factory=Pose)
    limits: tuple[float, float] = (-np.pi, np.pi)

    def __post_init__(self):
        axis = np.array(self.axis, dtype=float).reshape(-1)
        if axis.shape != (3,) or abs(np.linalg.norm(axis) - 1.0) > AXIS_TOL:
            raise ContractError(f"joint axis must be a unit 3-vector, got {axis}")
        lo, hi = (float(v) for v in self.limits)
        # lo == hi is a locked joint; its Jacobian column is still reported.
        if not lo <= hi:
            raise ContractError(f"joint limits must satisfy lo <= hi, got {self.limits}")
        axis.setflags(write=False)
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "limits", (lo, hi))


@dataclass(frozen=True, eq=False)
class SerialChain:
    joints: tuple[Joint, ...]
    base: Pose = field(default_factory=Pose)
    tip: Pose = field(default_factory=Pose)
    name: str = "arm"

    def __post_init__(self):
        joints = tuple(self.joints)
        if not joints:
            raise ContractError("a chain needs at least one joint")
        object.__setattr__(self, "joints", joints)

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def lower(self) -> np.ndarray:
        return np.array([j.limits[0] for j in self.joints])

    @property
    def upper(self) -> np.ndarray:
        return np.array([j.limits[1] for j in self.joints])

    def clamp(self, q) -> np.ndarray:
        return np.clip(np.asarray(q, dtype=float), self.lower, self.upper)

    def with_base(self, base: Pose) -> SerialChain:
        return SerialChain(self.joints, base, self.tip, self.name)


def _check_q(chain: SerialChain, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.ndim not in (1, 2) or q.shape[-1] != chain.n_joints:
        raise ContractError(
            f"{chain.name}: expected {chain.n_joints} joint values, got shape {q.shape}"
        )
    if not np.all(np.isfinite(q)):
        raise ContractError(f"{chain.name}: joint values must be finite")
    return q


class ChainKinematics(NamedTuple):
    """Batched kinematics of a chain at ``n`` configurations."""

    rotation: np.ndarray  # (n, 3, 3) flange rotation
    position: np.ndarray  # (n, 3) flange origin
    joint_axes: np.ndarray  # (n, nj, 3) world joint axes
    joint_origins: np.ndarray  # (n, nj, 3) world joint origins


def chain_kinematics(chain: SerialChain, qs) -> ChainKinematics:
    qs = _check_q(chain, qs)
    qs = np.atleast_2d(qs)
    n = qs.shape[0]
    rot = np.broadcast_to(chain.base.rotation, (n, 3, 3)).copy()
    pos = np.broadcast_to(chain.base.translation, (n, 3)).copy()
    axes = np.empty((n, chain.n_joints, 3))
    origins = np.empty((n, chain.n_joints, 3))
    for j, joint in enumerate(chain.joints):
        axes[:, j] = rot @ joint.axis
        origins[:, j] = pos
        rot = rot @ rotation_about(joint.axis, qs[:, j])
        pos = pos + rot @ joint.offset.translation
        rot = rot @ joint.offset.rotation
    return ChainKinematics(rot, pos, axes, origins)


def fk(chain: SerialChain, q) -> Pose:
    """Flange pose in the world frame."""
    q = _check_q(chain, q)
    if q.ndim != 1:
        raise ContractError("fk takes a single joint vector; use chain_kinematics for batches")
    kin = chain_kinematics(chain, q)
    return Pose(kin.rotation[0], kin.position[0])


def tip_pose(chain: SerialChain, q) -> Pose:
    return fk(chain, q).compose(chain.tip)


def point_jacobians(kin: ChainKinematics, local_point) -> tuple[np.ndarray, np.ndarray]:
    """World positions ``(n, 3)`` and linear Jacobians ``(n, 3, nj)`` of a flange-frame point."""
    world = kin.position + kin.rotation @ np.asarray(local_point, dtype=float)
    lever = world[:, None, :] - kin.joint_origins
    jac = np.cross(kin.joint_axes, lever).transpose(0, 2, 1)
    return world, jac


def fk_jacobian(chain: SerialChain, q, point=None) -> np.ndarray:
    """Geometric Jacobian ``(6, nj)``: linear rows for the tip, then angular rows.

    ``point`` overrides the flange-frame point whose linear velocity is reported
    (defaults to the tip offset origin). Locked joints keep their columns.
    """
    q = _check_q(chain, q)
    if q.ndim != 1:
        raise ContractError("fk_jacobian takes a single joint vector")
    kin = chain_kinematics(chain, q)
    local = chain.tip.translation if point is None else np.asarray(point, dtype=float)
    _, jv = point_jacobians(kin, local)
    jac = np.empty((6, chain.n_joints))
    jac[:3] = jv[0]
    jac[3:] = kin.joint_axes[0].T
    return jac


def solve_ik(
    chain: SerialChain,
    target,
    q0,
    approach=None,
    iterations: int = 200,
    damping: float = 1e-3,
    axis_weight: float = 0.3,
    tol: float = 1e-7,
) -> np.ndarray:
    """Damped least-squares IK on the tip position and, optionally, its approach axis.

    Returns the best configuration found inside the joint limits; the caller
    checks the residual if reachability matters.
    """
    target = np.asarray(target, dtype=float)
    q = chain.clamp(np.asarray(q0, dtype=float).copy())
    want_axis = None if approach is None else np.asarray(approach, float) / np.linalg.norm(approach)
    for _ in range(iterations):
        kin = chain_kinematics(chain, q)
        tip_rot = kin.rotation[0] @ chain.tip.rotation
        pos, jv = point_jacobians(kin, chain.tip.translation)
        err = [target - pos[0]]
        rows = [jv[0]]
        if want_axis is not None:
            a = tip_rot[:, 2]
            err.append(axis_weight * np.cross(a, want_axis))
            rows.append(axis_weight * kin.joint_axes[0].T)
        e = np.concatenate(err)
        if e @ e < tol * tol:
            break
        jac = np.vstack(rows)
        dq = jac.T @ np.linalg.solve(jac @ jac.T + damping * np.eye(jac.shape[0]), e)
        q = chain.clamp(q + dq)
    return q


@dataclass(frozen=True, eq=False)
class ArmPair:
    """The two registered chains and the action-row layout they imply.

    Row layout: left joints, right joints, left gripper width, right gripper width.
    """

    left: SerialChain
    right: SerialChain

    def chain(self, arm: str) -> SerialChain:
        if arm == "left":
            return self.left
        if arm == "right":
            return self.right
        raise ContractError(f"unknown arm {arm!r}")

    @property
    def action_dim(self) -> int:
        return self.left.n_joints + self.right.n_joints + 2

    def joint_slice(self, arm: str) -> slice:
        nl = self.left.n_joints
        if arm == "left":
            return slice(0, nl)
        if arm == "right":
            return slice(nl, nl + self.right.n_joints)
        raise ContractError(f"unknown arm {arm!r}")

    def gripper_column(self, arm: str) -> int:
        base = self.left.n_joints + self.right.n_joints
        return base if arm == "left" else base + 1

    def split(self, row) -> tuple[np.ndarray, np.ndarray, float, float]:
        row = np.asarray(row, dtype=float)
        return (
            row[self.joint_slice("left")],
            row[self.joint_slice("right")],
            float(row[self.gripper_column("left")]),
            float(row[self.gripper_column("right")]),
        )

    def join(self, q_left, q_right, g_left: float, g_right: float) -> np.ndarray:
        return np.concatenate([np.asarray(q_left, float), np.asarray(q_right, float), [g_left, g_right]])


ARMS: Sequence[str] = ("left", "right")
