"""Built-in desk-scale bimanual scenarios with scripted (and deliberately flawed) demonstrations.

Each scenario lays out objects with per-seed jitter, then scripts tip
waypoints for both arms. The script contains one built-in flaw that
produces a specific unsafe event when executed verbatim; the guided sampler
is expected to steer around it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import ConfigurationError
from ..geometry import ArmPair, Joint, Pose, SerialChain, rotation_about, solve_ik, tip_pose
from ..scheduler.patterns import UnsafePattern
from .scene import KeypointDecl, Scene, SceneObject

DOWN = np.array([0.0, 0.0, -1.0])
OPEN, CLOSED = 0.08, 0.0


def desk_arm(name: str, base_xyz, yaw: float = 0.0) -> SerialChain:
    """4-DOF arm: base yaw, then three pitch joints; the tool axis continues the last link."""
    joints = (
        Joint((0, 0, 1), Pose.from_translation((0.0, 0.0, 0.30)), (-math.pi, math.pi)),
        Joint((0, 1, 0), Pose.from_translation((0.30, 0.0, 0.0)), (-1.6, 1.6)),
        Joint((0, 1, 0), Pose.from_translation((0.28, 0.0, 0.0)), (0.05, 2.8)),
        Joint((0, 1, 0), Pose.from_translation((0.06, 0.0, 0.0)), (-2.8, 2.8)),
    )
    tip = Pose(rotation_about(np.array([0.0, 1.0, 0.0]), math.pi / 2), np.array([0.08, 0.0, 0.0]))
    base = Pose.from_axis_angle((0, 0, 1), yaw, base_xyz)
    return SerialChain(joints, base, tip, name)


def default_arms() -> ArmPair:
    return ArmPair(desk_arm("left", (0.0, 0.30, 0.0)), desk_arm("right", (0.0, -0.30, 0.0)))


LINKS = (0.30, 0.28)  # upper arm, forearm
SHOULDER = 0.30
WRIST = 0.14  # wrist pitch axis to tool tip, along the tool axis


def _seed_q(chain: SerialChain, target) -> np.ndarray:
    rel = chain.base.inverse().apply(target)
    yaw = math.atan2(rel[1], rel[0])
    return np.array([yaw, -0.2, 1.4, math.pi / 2 + 0.2 - 1.4])


def desk_arm_ik(chain: SerialChain, target) -> np.ndarray:
    """Closed-form top-down IK for :func:`desk_arm` (elbow-up branch)."""
    rel = chain.base.inverse().apply(target)
    yaw = math.atan2(rel[1], rel[0])
    dx, dz = math.hypot(rel[0], rel[1]), SHOULDER - (rel[2] + WRIST)
    l1, l2 = LINKS
    c3 = (dx * dx + dz * dz - l1 * l1 - l2 * l2) / (2 * l1 * l2)
    q3 = math.acos(min(1.0, max(-1.0, c3)))
    q2 = math.atan2(dz, dx) - math.atan2(l2 * math.sin(q3), l1 + l2 * math.cos(q3))
    return np.array([yaw, q2, q3, math.pi / 2 - q2 - q3])


def _is_desk_arm(chain: SerialChain) -> bool:
    ref = desk_arm(chain.name, (0.0, 0.0, 0.0))
    return chain.n_joints == 4 and all(
        np.allclose(a.axis, b.axis) and a.offset.allclose(b.offset, 1e-12)
        for a, b in zip(chain.joints, ref.joints)
    ) and chain.tip.allclose(ref.tip, 1e-12) and np.allclose(chain.base.rotation, np.eye(3))


def ik_track(chain: SerialChain, targets: np.ndarray, tol: float = 1e-4) -> np.ndarray:
    """Top-down IK along a tip path; raises if a waypoint is unreachable.

    Desk arms use the closed form; other chains use warm-started damped least squares.
    """
    qs = np.empty((len(targets), chain.n_joints))
    closed_form = _is_desk_arm(chain)
    q = _seed_q(chain, targets[0]) if chain.n_joints == 4 else np.zeros(chain.n_joints)
    for i, p in enumerate(targets):
        if closed_form:
            q = chain.clamp(desk_arm_ik(chain, p))
        else:
            q = solve_ik(chain, p, q, approach=DOWN, iterations=200 if i == 0 else 60)
        got = tip_pose(chain, q)
        err = np.linalg.norm(got.translation - p) + np.linalg.norm(got.rotation[:, 2] - DOWN)
        if err > tol:
            raise ConfigurationError(f"{chain.name}: waypoint {np.round(p, 4).tolist()} unreachable "
                                     f"(residual {err:.2e})")
        qs[i] = q
    return qs


# A waypoint is (tip xyz, gripper width, steps to reach it from the previous one).
Waypoint = tuple[np.ndarray, float, int]


def expand(waypoints: list[Waypoint]) -> tuple[np.ndarray, np.ndarray]:
    """Linear interpolation of tip positions and widths; the first waypoint is the start."""
    p0, w0, _ = waypoints[0]
    pts, widths = [np.asarray(p0, float)], [w0]
    for p, w, steps in waypoints[1:]:
        p = np.asarray(p, float)
        a, wa = pts[-1], widths[-1]
        for s in range(1, steps + 1):
            f = s / steps
            pts.append(a + f * (p - a))
            widths.append(wa + f * (w - wa))
    return np.array(pts), np.array(widths)


@dataclass(frozen=True)
class ObjectSpec:
    id: str
    center: tuple[float, float, float]
    radius: float
    grasp_width: float = 0.04
    grasp_radius: float = 0.045
    held_by: str | None = None


@dataclass(frozen=True)
class StageDecl:
    id: int
    name: str
    until: str | None = None
    expected: tuple[str, ...] = ()
    bindings: dict = field(default_factory=dict)  # pattern name -> (left id, right id)
    alignment: tuple[int, int] | None = None


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    description: str
    target: UnsafePattern
    objects: tuple[ObjectSpec, ...]
    keypoints: tuple[KeypointDecl, ...]
    stages: tuple[StageDecl, ...]
    goal: str
    script: Callable[[dict[str, np.ndarray]], dict[str, list[Waypoint]]] = field(repr=False)
    weights: tuple[float, float, float, float, float] = (1.0, 1.0, 1.0, 1.0, 1.0)
    rho0: float = 1.0
    h0: float = 0.0
    lam: float = 1.0
    jitter: float = 0.015
    pad: int = 20

    def layout(self, rng: np.random.Generator | None) -> dict[str, np.ndarray]:
        centers = {}
        for o in self.objects:
            c = np.array(o.center, dtype=float)
            if rng is not None and self.jitter > 0:
                c[:2] += rng.uniform(-self.jitter, self.jitter, size=2)
            centers[o.id] = c
        return centers


@dataclass
class Episode:
    """A freshly built scene plus the scripted joint-space demonstration."""

    scene: Scene
    demo: np.ndarray  # (T0, d) action rows; row 0 is the initial state
    horizon: int


def build_episode(spec: ScenarioSpec, rng: np.random.Generator | None, arms: ArmPair | None = None) -> Episode:
    arms = arms or default_arms()
    centers = spec.layout(rng)
    script = spec.script(centers)
    paths = {arm: expand(script[arm]) for arm in ("left", "right")}
    length = max(len(p[0]) for p in paths.values())
    cols = {}
    for arm, (pts, widths) in paths.items():
        pad = length - len(pts)
        pts = np.vstack([pts, np.repeat(pts[-1:], pad, axis=0)])
        widths = np.concatenate([widths, np.repeat(widths[-1:], pad)])
        cols[arm] = (ik_track(arms.chain(arm), pts), widths)
    demo = np.hstack([cols["left"][0], cols["right"][0], cols["left"][1][:, None], cols["right"][1][:, None]])

    q0 = {a: cols[a][0][0] for a in ("left", "right")}
    objects = []
    for o in spec.objects:
        c = centers[o.id]
        holders = [o.held_by] if o.held_by else []
        objects.append(SceneObject(o.id, Pose.from_translation(c), o.radius, o.grasp_width, o.grasp_radius,
                                   holders))
    scene = Scene(arms, q0, {a: cols[a][1][0] for a in ("left", "right")}, objects, list(spec.keypoints))
    return Episode(scene, demo, length + spec.pad)


def _up(p, dz):
    return np.asarray(p, float) + np.array([0.0, 0.0, dz])


def _at(p, dx=0.0, dy=0.0, z=None):
    q = np.asarray(p, float) + np.array([dx, dy, 0.0])
    if z is not None:
        q[2] = z
    return q


HOME_L = np.array([0.25, 0.30, 0.25])
HOME_R = np.array([0.25, -0.30, 0.25])


def _dual_pick_script(c):
    # flaw: the presentation poses leave the bottles 5 cm apart (spheres overlap)
    a, b = c["bottle_a"], c["bottle_b"]
    left = [(HOME_L, OPEN, 0), (_up(a, 0.12), OPEN, 15), (a, OPEN, 10), (a, CLOSED, 4),
            (_at(a, z=0.16), CLOSED, 10), (np.array([0.40, 0.025, 0.16]), CLOSED, 20),
            (np.array([0.40, 0.025, 0.16]), CLOSED, 8)]
    right = [(HOME_R, OPEN, 0), (_up(b, 0.12), OPEN, 15), (b, OPEN, 10), (b, CLOSED, 4),
             (_at(b, z=0.16), CLOSED, 10), (np.array([0.40, -0.025, 0.16]), CLOSED, 20),
             (np.array([0.40, -0.025, 0.16]), CLOSED, 8)]
    return {"left": left, "right": right}


def _handover_script(c):
    # flaw: the right arm slides 6 cm outwards while both grippers hold the apple
    a = c["apple"]
    lifted = _at(a, z=0.16)
    gl, gr = _at(lifted, dy=0.025), _at(lifted, dy=-0.025)
    left = [(HOME_L, OPEN, 0), (_up(_at(a, dy=0.025), 0.12), OPEN, 15), (_at(a, dy=0.025), OPEN, 10),
            (_at(a, dy=0.025), CLOSED, 4), (gl, CLOSED, 10),
            (gl, CLOSED, 36), (gl, OPEN, 4), (_up(gl, 0.12), OPEN, 8)]
    right = [(HOME_R, OPEN, 0), (HOME_R, OPEN, 39), (_up(gr, 0.12), OPEN, 12), (gr, OPEN, 8),
             (gr, CLOSED, 4), (_at(gr, dy=-0.06), CLOSED, 10), (_at(gr, dy=-0.06), CLOSED, 6),
             (np.array([0.38, -0.20, 0.18]), CLOSED, 15), (np.array([0.38, -0.20, 0.18]), CLOSED, 5)]
    return {"left": left, "right": right}


POUR_H0 = 0.12


def _pour_script(c):
    # flaw: the spout stops 4.5 cm beside the cup mouth
    bottle, cup = c["bottle"], c["cup"]
    cup_goal = np.array([0.40, cup[1] + 0.12, 0.10])
    mouth = _up(cup_goal, 0.04)
    pour = _up(_at(mouth, dy=0.045), POUR_H0 - 0.06)  # bottle centre sits 6 cm below its spout
    left = [(bottle, CLOSED, 0), (bottle, CLOSED, 5), (_up(pour, 0.12), CLOSED, 18), (pour, CLOSED, 8),
            (pour, CLOSED, 15), (_up(pour, 0.14), CLOSED, 8), (_up(pour, 0.14), CLOSED, 4)]
    right = [(cup, CLOSED, 0), (cup_goal, CLOSED, 15), (cup_goal, CLOSED, 43)]
    return {"left": left, "right": right}


def _stack_script(c):
    # flaw: the left gripper descends 3.5 cm off the block's top keypoint
    a, b = c["block_a"], c["block_b"]
    grip = _at(a, dx=0.035)
    place = _at(b, dx=0.035, z=b[2] + 0.08)
    left = [(HOME_L, OPEN, 0), (_up(grip, 0.12), OPEN, 15), (grip, OPEN, 10), (grip, CLOSED, 4),
            (_at(grip, z=0.22), CLOSED, 10), (_up(place, 0.04), CLOSED, 15), (place, CLOSED, 6),
            (place, OPEN, 4), (_up(place, 0.06), OPEN, 8), (_up(place, 0.06), OPEN, 4)]
    right = [(b, CLOSED, 0), (b, CLOSED, 76)]
    return {"left": left, "right": right}


SCENARIOS: dict[str, ScenarioSpec] = {}


def _register(spec: ScenarioSpec) -> ScenarioSpec:
    SCENARIOS[spec.name] = spec
    return spec


_register(ScenarioSpec(
    name="dual_pick",
    description="each arm picks a bottle and presents both side by side",
    target=UnsafePattern.ObjectObjectCollision,
    objects=(ObjectSpec("bottle_a", (0.36, 0.16, 0.035), 0.035), ObjectSpec("bottle_b", (0.36, -0.16, 0.035), 0.035)),
    keypoints=(KeypointDecl(1, "bottle_a", label="bottle_a_centre"), KeypointDecl(2, "bottle_b", label="bottle_b_centre")),
    stages=(
        StageDecl(1, "grasp bottles", "grasped(left, bottle_a) and grasped(right, bottle_b)",
                  bindings={"poking": (1, 2)}),
        StageDecl(2, "present bottles", None, ("object_collision",),
                  {"object_collision": (1, 2), "gripper_collision": (-1, -2)}),
    ),
    goal=("grasped(left, bottle_a) and grasped(right, bottle_b) and object_height(bottle_a) > 0.12 "
          "and object_height(bottle_b) > 0.12 and distance(bottle_a, bottle_b) < 0.16"),
    script=_dual_pick_script,
    weights=(0.25, 0.0, 0.05, 0.0, 0.1),
    rho0=60.0,
))

_register(ScenarioSpec(
    name="handover",
    description="left picks the apple, right takes it over and carries it away",
    target=UnsafePattern.GripperTearing,
    objects=(ObjectSpec("apple", (0.38, 0.0, 0.04), 0.04),),
    keypoints=(KeypointDecl(3, "apple", (0.0, 0.025, 0.0), "apple_left_side"),
               KeypointDecl(4, "apple", (0.0, -0.025, 0.0), "apple_right_side")),
    stages=(
        StageDecl(1, "left grasps apple", "grasped(left, apple)", bindings={"poking": (3, None)}),
        StageDecl(2, "hand over", "grasped(right, apple) and not grasped(left, apple)",
                  bindings={"poking": (None, 4), "tearing": (-1, -2), "gripper_collision": (-1, -2)}),
        StageDecl(3, "carry away"),
    ),
    goal="grasped(right, apple) and not gripper_closed(left) and distance(apple, left_tip) > 0.1",
    script=_handover_script,
    weights=(0.0, 0.0, 0.05, 1.0, 0.1),
    rho0=60.0,
))

_register(ScenarioSpec(
    name="pour",
    description="left brings a bottle over the cup held by right and pours",
    target=UnsafePattern.BehaviorMisalignment,
    objects=(ObjectSpec("bottle", (0.34, 0.20, 0.12), 0.03, held_by="left"),
             ObjectSpec("cup", (0.38, -0.16, 0.10), 0.04, held_by="right")),
    keypoints=(KeypointDecl(1, "bottle", (0.0, 0.0, 0.06), "bottle_spout"),
               KeypointDecl(2, "cup", (0.0, 0.0, 0.04), "cup_mouth")),
    stages=(
        StageDecl(1, "approach cup", "distance(1, 2) < 0.14", ("misalignment",), {"misalignment": (1, 2)}),
        StageDecl(2, "pour", "object_height(bottle) > 0.27", ("misalignment",), {"misalignment": (1, 2)},
                  alignment=(1, 2)),
        StageDecl(3, "retreat"),
    ),
    goal="object_height(bottle) > 0.3 and grasped(left, bottle) and grasped(right, cup)",
    script=_pour_script,
    weights=(0.0, 1.0, 0.0, 0.0, 0.0),
    rho0=60.0,
    h0=POUR_H0,
    lam=1.0,
))

_register(ScenarioSpec(
    name="stack",
    description="left picks a block and stacks it above the block held by right",
    target=UnsafePattern.GripperPoking,
    objects=(ObjectSpec("block_a", (0.36, 0.18, 0.04), 0.04),
             ObjectSpec("block_b", (0.38, -0.04, 0.10), 0.035, held_by="right")),
    keypoints=(KeypointDecl(1, "block_a", (0.0, 0.0, 0.03), "block_a_top"),
               KeypointDecl(2, "block_b", (0.0, 0.0, 0.03), "block_b_top")),
    stages=(
        StageDecl(1, "pick block", "grasped(left, block_a)", bindings={"poking": (1, None)}),
        StageDecl(2, "stack", None, bindings={"object_collision": (1, 2), "gripper_collision": (-1, -2)}),
    ),
    goal=("not gripper_closed(left) and grasped(right, block_b) "
          "and object_height(block_a) - object_height(block_b) > 0.05 and distance(block_a, block_b) < 0.14"),
    script=_stack_script,
    weights=(0.05, 0.0, 0.2, 0.0, 0.1),
    rho0=60.0,
))


def get_scenario(name: str) -> ScenarioSpec:
    try:
        return SCENARIOS[name]
    except KeyError:
        raise ConfigurationError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None
