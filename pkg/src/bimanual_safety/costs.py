"""Differentiable bimanual safety costs over keypoints driven by the action chunk.

Every cost is averaged over the chunk rows and returns its analytic gradient
with respect to the whole ``(n, d)`` chunk. Norms that appear un-squared are
floored at ``eps_dist`` inside the gradient; the number of floored rows is
reported in :attr:`CostValue.floored`.

Cost indices follow the taxonomy order: 1 object-object collision,
2 behavior alignment, 3 poking, 4 tearing, 5 gripper-gripper collision.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, ContractError, SchedulingContractError
from .geometry import ArmPair, Pose, chain_kinematics, point_jacobians, tip_pose

BindingKind = Literal["tip", "grasped", "static"]
COST_NAMES = ("C1", "C2", "C3", "C4", "C5")


@dataclass(frozen=True, eq=False)
class KeypointBinding:
    """A keypoint attached to one arm.

    ``tip``: the gripper tip of ``arm``. ``grasped``: a point rigidly attached
    to the tip frame, ``offset`` being its pose relative to the tip (captured at
    the first row of the chunk). ``static``: a world-fixed point that moves with
    nothing (an object the arm is approaching, for instance).
    """

    arm: str
    kind: BindingKind = "tip"
    offset: Pose | None = None
    point: np.ndarray | None = None
    label: str = ""
    id: int | None = None

    def __post_init__(self):
        if self.arm not in ("left", "right"):
            raise ContractError(f"unknown arm {self.arm!r}")
        if self.kind == "grasped":
            if self.offset is None:
                raise ContractError("grasped bindings need a grasp offset")
        elif self.kind == "static":
            if self.point is None or not np.all(np.isfinite(self.point)):
                raise ContractError("static bindings need a finite world point")
            object.__setattr__(self, "point", np.asarray(self.point, dtype=float))
        elif self.kind != "tip":
            raise ContractError(f"unknown binding kind {self.kind!r}")

    @classmethod
    def tip(cls, arm: str) -> KeypointBinding:
        return cls(arm, "tip", label=f"{arm}_gripper_tip", id=-1 if arm == "left" else -2)


def grasp_binding(arms: ArmPair, arm: str, q, world_point, label: str = "", id=None) -> KeypointBinding:
    """Binding for ``world_point`` held rigidly by ``arm`` at configuration ``q``."""
    local = tip_pose(arms.chain(arm), q).inverse().apply(world_point)
    return KeypointBinding(arm, "grasped", Pose.from_translation(local), label=label, id=id)


@dataclass(frozen=True)
class CostParams:
    z: tuple[float, float, float] = (0.0, 0.0, 1.0)
    h0: float = 0.0
    lam: float = 1.0
    d0: float | None = None
    eps_dist: float = 1e-6

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        if z.shape != (3,) or abs(np.linalg.norm(z) - 1.0) > 1e-9:
            raise ContractError("alignment axis z must be a unit 3-vector")
        if self.lam < 0:
            raise ContractError("lam must be >= 0")
        if not self.eps_dist > 0:
            raise ContractError("eps_dist must be > 0")
        if self.d0 is not None and not self.d0 > 0:
            raise ContractError("d0 must be > 0")


@dataclass
class CostValue:
    value: float
    gradient: np.ndarray
    terms: dict[str, float] = field(default_factory=dict)
    floored: int = 0

    def __add__(self, other: CostValue) -> CostValue:
        terms = dict(self.terms)
        for key, val in other.terms.items():
            terms[key] = terms.get(key, 0.0) + val
        return CostValue(self.value + other.value, self.gradient + other.gradient, terms,
                         self.floored + other.floored)

    def scaled(self, w: float) -> CostValue:
        return CostValue(w * self.value, w * self.gradient, {k: w * v for k, v in self.terms.items()},
                         self.floored)


def _check_chunk(chunk, arms: ArmPair) -> np.ndarray:
    chunk = np.asarray(chunk, dtype=float)
    if chunk.ndim != 2 or chunk.shape[1] != arms.action_dim:
        raise ContractError(f"chunk must be (n, {arms.action_dim}), got {chunk.shape}")
    return chunk


def _local_point(arms: ArmPair, binding: KeypointBinding) -> np.ndarray:
    tip = arms.chain(binding.arm).tip
    if binding.kind == "tip":
        return tip.translation
    return tip.apply(binding.offset.translation)


def bound_keypoint_positions(chunk, binding: KeypointBinding, arms: ArmPair | None):
    """Per-row world positions ``(n, 3)`` and position Jacobians ``(n, 3, nj)``.

    The Jacobian is taken with respect to the joints of ``binding.arm`` only.
    """
    if arms is None:
        raise ConfigurationError("no arm chains registered")
    chunk = _check_chunk(chunk, arms)
    chain = arms.chain(binding.arm)
    n = chunk.shape[0]
    if binding.kind == "static":
        return np.tile(binding.point, (n, 1)), np.zeros((n, 3, chain.n_joints))
    kin = chain_kinematics(chain, chunk[:, arms.joint_slice(binding.arm)])
    return point_jacobians(kin, _local_point(arms, binding))


def _scatter(grad, arms: ArmPair, binding: KeypointBinding, dpos, jac):
    """Accumulate ``dC/dpos (n, 3)`` through ``jac (n, 3, nj)`` into the chunk gradient."""
    if binding.kind == "static":
        return
    grad[:, arms.joint_slice(binding.arm)] += np.einsum("ni,nij->nj", dpos, jac)


def _unit_rows(v, eps):
    norm = np.linalg.norm(v, axis=1)
    safe = np.maximum(norm, eps)
    return norm, v / safe[:, None], int(np.sum(norm < eps))


def _pair(chunk, arms, kl: KeypointBinding, kr: KeypointBinding):
    if kl.arm == kr.arm:
        raise ContractError("pairwise costs need bindings on distinct arms")
    pl, jl = bound_keypoint_positions(chunk, kl, arms)
    pr, jr = bound_keypoint_positions(chunk, kr, arms)
    return pl, jl, pr, jr


def _distance_cost(chunk, arms, kl, kr, eps, name):
    chunk = _check_chunk(chunk, arms)
    n = chunk.shape[0]
    pl, jl, pr, jr = _pair(chunk, arms, kl, kr)
    dist, unit, floored = _unit_rows(pl - pr, eps)
    value = -float(dist.sum()) / n
    grad = np.zeros_like(chunk)
    _scatter(grad, arms, kl, -unit / n, jl)
    _scatter(grad, arms, kr, unit / n, jr)
    return CostValue(value, grad, {name: value}, floored)


def cost_objects_collision(chunk, kl: KeypointBinding, kr: KeypointBinding, arms: ArmPair,
                           eps_dist: float = 1e-6) -> CostValue:
    """C1: negative mean distance between two object keypoints."""
    return _distance_cost(chunk, arms, kl, kr, eps_dist, "C1")


def cost_behavior_alignment(chunk, kl: KeypointBinding, kr: KeypointBinding, arms: ArmPair,
                            params: CostParams) -> CostValue:
    """C2: planar misalignment of ``kl - kr`` w.r.t. axis ``z`` plus a weighted height error."""
    chunk = _check_chunk(chunk, arms)
    n = chunk.shape[0]
    z = np.asarray(params.z, dtype=float)
    pl, jl, pr, jr = _pair(chunk, arms, kl, kr)
    diff = pl - pr
    along = diff @ z
    lateral = diff - along[:, None] * z
    resid = along - params.h0
    value = float(np.sum(np.sum(lateral**2, axis=1) + params.lam * resid**2)) / n
    dldiff = (2.0 * lateral + 2.0 * params.lam * resid[:, None] * z) / n
    grad = np.zeros_like(chunk)
    _scatter(grad, arms, kl, dldiff, jl)
    _scatter(grad, arms, kr, -dldiff, jr)
    return CostValue(value, grad, {"C2": value})


def cost_poking(chunk, k: KeypointBinding, arm: str, arms: ArmPair, eps_dist: float = 1e-6) -> CostValue:
    """C3: mean lateral offset of keypoint ``k`` from the approach ray of ``arm``'s tip.

    The approach axis depends on the joints too; its derivative is
    ``w_j x a`` for each joint axis ``w_j``.
    """
    chunk = _check_chunk(chunk, arms)
    n = chunk.shape[0]
    chain = arms.chain(arm)
    kin = chain_kinematics(chain, chunk[:, arms.joint_slice(arm)])
    tip, jtip = point_jacobians(kin, chain.tip.translation)
    axis = (kin.rotation @ chain.tip.rotation)[:, :, 2]
    kp, jk = bound_keypoint_positions(chunk, k, arms)
    v = kp - tip
    along = np.einsum("ni,ni->n", axis, v)
    lateral = v - along[:, None] * axis
    norm, unit, floored = _unit_rows(lateral, eps_dist)
    value = float(norm.sum()) / n
    grad = np.zeros_like(chunk)
    # d|u| = u_hat . dv - (a . v) u_hat . da, since u_hat is orthogonal to a.
    _scatter(grad, arms, k, unit / n, jk)
    _scatter(grad, arms, KeypointBinding.tip(arm), -unit / n, jtip)
    da = np.cross(kin.joint_axes, axis[:, None, :])  # (n, nj, 3)
    grad[:, arms.joint_slice(arm)] -= np.einsum("n,ni,nji->nj", along, unit, da) / n
    return CostValue(value, grad, {"C3": value}, floored)


def cost_tearing(chunk, d0: float, arms: ArmPair, kl: KeypointBinding | None = None,
                 kr: KeypointBinding | None = None, eps_dist: float = 1e-6) -> CostValue:
    """C4: mean squared deviation of the tip distance from the grasp width ``d0``."""
    if d0 is None or not d0 > 0:
        raise ContractError("tearing cost needs d0 > 0")
    chunk = _check_chunk(chunk, arms)
    n = chunk.shape[0]
    kl = kl or KeypointBinding.tip("left")
    kr = kr or KeypointBinding.tip("right")
    pl, jl, pr, jr = _pair(chunk, arms, kl, kr)
    dist, unit, floored = _unit_rows(pl - pr, eps_dist)
    dev = dist - d0
    value = float(np.sum(dev**2)) / n
    dpl = (2.0 * dev / n)[:, None] * unit
    grad = np.zeros_like(chunk)
    _scatter(grad, arms, kl, dpl, jl)
    _scatter(grad, arms, kr, -dpl, jr)
    return CostValue(value, grad, {"C4": value}, floored)


def cost_gripper_collision(chunk, arms: ArmPair, kl: KeypointBinding | None = None,
                           kr: KeypointBinding | None = None, eps_dist: float = 1e-6) -> CostValue:
    """C5: negative mean distance between the two gripper tips."""
    return _distance_cost(chunk, arms, kl or KeypointBinding.tip("left"),
                          kr or KeypointBinding.tip("right"), eps_dist, "C5")


def _pair_bindings(index: int, bindings) -> tuple[KeypointBinding, KeypointBinding]:
    name = COST_NAMES[index - 1]
    found = bindings.get(index) if bindings else None
    if not found:
        raise SchedulingContractError(name, "active term has no keypoint bindings")
    by_arm = {b.arm: b for b in found}
    if set(by_arm) != {"left", "right"} or len(found) != 2:
        raise SchedulingContractError(name, "needs exactly one binding per arm")
    return by_arm["left"], by_arm["right"]


def scheduled_cost(
    chunk,
    mask: Sequence[bool],
    bindings: Mapping[int, Sequence[KeypointBinding]],
    params: CostParams,
    arms: ArmPair,
    weights: Sequence[float] = (1.0, 1.0, 1.0, 1.0, 1.0),
) -> CostValue:
    """Weighted sum of the active costs; ``bindings`` maps cost index (1-5) to its keypoints.

    C3 accepts one binding per approaching arm and sums the per-arm terms.
    """
    chunk = _check_chunk(chunk, arms)
    mask = tuple(bool(m) for m in mask)
    if len(mask) != 5 or len(weights) != 5:
        raise ContractError("mask and weights need five entries")
    total = CostValue(0.0, np.zeros_like(chunk), {})
    eps = params.eps_dist
    for index, on in enumerate(mask, start=1):
        if not on:
            continue
        w = float(weights[index - 1])
        if index == 3:
            found = bindings.get(3) if bindings else None
            if not found:
                raise SchedulingContractError("C3", "active term has no keypoint bindings")
            term = None
            for b in found:
                part = cost_poking(chunk, b, b.arm, arms, eps)
                term = part if term is None else term + part
        elif index == 1:
            term = cost_objects_collision(chunk, *_pair_bindings(1, bindings), arms, eps)
        elif index == 2:
            term = cost_behavior_alignment(chunk, *_pair_bindings(2, bindings), arms, params)
        elif index == 4:
            if params.d0 is None:
                raise SchedulingContractError("C4", "initial grasp width d0 not captured")
            kl, kr = _pair_bindings(4, bindings)
            term = cost_tearing(chunk, params.d0, arms, kl, kr, eps)
        else:
            kl, kr = _pair_bindings(5, bindings)
            term = cost_gripper_collision(chunk, arms, kl, kr, eps)
        total = total + term.scaled(w)
    return total


@dataclass(frozen=True, eq=False)
class SafetyCost:
    """Callable cost evaluator bound to a mask, keypoints and parameters."""

    arms: ArmPair
    mask: tuple[bool, ...]
    bindings: Mapping[int, Sequence[KeypointBinding]]
    params: CostParams = field(default_factory=CostParams)
    weights: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0, 1.0)

    def __call__(self, chunk) -> CostValue:
        return scheduled_cost(chunk, self.mask, self.bindings, self.params, self.arms, self.weights)

    @property
    def active(self) -> bool:
        return any(m and w != 0 for m, w in zip(self.mask, self.weights))
