"""Kinematic two-arm scene: joint-space arms, sphere objects, grasp attachment."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError
from ..geometry import ArmPair, Pose, tip_pose
from ..observation import KeypointState, ObjectState, Observation

ARMS = ("left", "right")
MAX_WIDTH = 0.08


@dataclass
class SceneObject:
    id: str
    pose: Pose
    radius: float
    grasp_width: float = 0.04  # closing through this width triggers a grasp
    grasp_radius: float = 0.05  # max tip-to-centre distance for a grasp
    holders: list[str] = field(default_factory=list)
    grasp_offsets: dict[str, Pose] = field(default_factory=dict)  # inv(tip) @ object at attach time
    prev_center: np.ndarray | None = None

    @property
    def center(self) -> np.ndarray:
        return self.pose.translation


@dataclass(frozen=True)
class KeypointDecl:
    id: int
    object_id: str
    offset: tuple[float, float, float] = (0.0, 0.0, 0.0)  # object frame
    label: str = ""


class Scene:
    """Mutable scene owned by one episode.

    Objects held by two arms follow the first holder; when that holder lets
    go, the remaining holder re-grasps at the current relative pose.
    """

    def __init__(
        self,
        arms: ArmPair,
        q: dict[str, np.ndarray],
        widths: dict[str, float],
        objects: list[SceneObject],
        keypoints: list[KeypointDecl] = (),
        max_width: float = MAX_WIDTH,
    ):
        self.arms = arms
        self.max_width = max_width
        self.q = {a: arms.chain(a).clamp(np.asarray(q[a], dtype=float)) for a in ARMS}
        self.widths = {a: float(np.clip(widths[a], 0.0, max_width)) for a in ARMS}
        self.objects = {o.id: o for o in objects}
        if len(self.objects) != len(objects):
            raise ContractError("object ids must be unique")
        self.keypoints = {k.id: k for k in keypoints}
        for k in keypoints:
            if k.object_id not in self.objects:
                raise ContractError(f"keypoint {k.id} references unknown object {k.object_id!r}")
        self.t = 0
        self.dual_grasp_width: float | None = None
        self._prev_tips = {a: self.tip(a).translation for a in ARMS}
        for obj in self.objects.values():
            obj.prev_center = obj.center.copy()
            for arm in obj.holders:
                obj.grasp_offsets[arm] = self.tip(arm).inverse() @ obj.pose
        self._capture_dual()

    def tip(self, arm: str) -> Pose:
        return tip_pose(self.arms.chain(arm), self.q[arm])

    def holding(self, arm: str) -> str | None:
        for obj in self.objects.values():
            if arm in obj.holders:
                return obj.id
        return None

    def tip_distance(self) -> float:
        return float(np.linalg.norm(self.tip("left").translation - self.tip("right").translation))

    def _capture_dual(self):
        dual = any(len(o.holders) == 2 for o in self.objects.values())
        if dual and self.dual_grasp_width is None:
            self.dual_grasp_width = self.tip_distance()
        elif not dual:
            self.dual_grasp_width = None

    def step(self, row) -> Scene:
        """Execute one action row in place and return the scene.

        Order: clamp and set joints/widths, release, move attached objects,
        attach newly grasped objects, advance ``t``.
        """
        ql, qr, gl, gr = self.arms.split(row)
        prev_widths = dict(self.widths)
        self._prev_tips = {a: self.tip(a).translation for a in ARMS}
        self.q = {"left": self.arms.left.clamp(ql), "right": self.arms.right.clamp(qr)}
        self.widths = {a: float(np.clip(g, 0.0, self.max_width)) for a, g in zip(ARMS, (gl, gr))}
        tips = {a: self.tip(a) for a in ARMS}

        for obj in self.objects.values():
            obj.prev_center = obj.center.copy()
            for arm in list(obj.holders):
                if prev_widths[arm] <= obj.grasp_width < self.widths[arm]:
                    lead = obj.holders[0] == arm
                    obj.holders.remove(arm)
                    del obj.grasp_offsets[arm]
                    if lead and obj.holders:
                        other = obj.holders[0]
                        obj.grasp_offsets[other] = tips[other].inverse() @ obj.pose
            if obj.holders:
                lead = obj.holders[0]
                obj.pose = tips[lead] @ obj.grasp_offsets[lead]

        for arm in ARMS:
            if self.holding(arm) is not None:
                continue
            for obj in self.objects.values():
                crossed = prev_widths[arm] > obj.grasp_width >= self.widths[arm]
                near = np.linalg.norm(tips[arm].translation - obj.center) <= obj.grasp_radius
                if crossed and near:
                    obj.holders.append(arm)
                    obj.grasp_offsets[arm] = tips[arm].inverse() @ obj.pose
                    break
        self._capture_dual()
        self.t += 1
        return self

    def keypoint_world(self) -> dict[int, np.ndarray]:
        return {k.id: self.objects[k.object_id].pose.apply(k.offset) for k in self.keypoints.values()}

    def observe(self, keypoints: dict[int, tuple[np.ndarray, str]] | None = None) -> Observation:
        """Structured snapshot; ``keypoints`` defaults to exact world positions."""
        if keypoints is None:
            keypoints = {i: (p, "observed") for i, p in self.keypoint_world().items()}
        tips = {a: self.tip(a) for a in ARMS}
        objects = {
            o.id: ObjectState(o.id, o.center.copy(), o.radius, o.pose.rotation[:, 2].copy(),
                              tuple(o.holders), None if o.prev_center is None else o.prev_center.copy())
            for o in self.objects.values()
        }
        kps = {
            i: KeypointState(i, np.asarray(xyz, dtype=float), self.keypoints[i].object_id,
                             self.keypoints[i].label, prov)
            for i, (xyz, prov) in keypoints.items()
        }
        return Observation(
            t=self.t,
            q={a: self.q[a].copy() for a in ARMS},
            tips={a: tips[a].translation.copy() for a in ARMS},
            tip_axes={a: tips[a].rotation[:, 2].copy() for a in ARMS},
            prev_tips={a: self._prev_tips[a].copy() for a in ARMS},
            widths=dict(self.widths),
            closed={a: self.widths[a] <= 0.5 * self.max_width for a in ARMS},
            objects=objects,
            keypoints=kps,
            dual_grasp_width=self.dual_grasp_width,
        )

    def state_row(self) -> np.ndarray:
        return self.arms.join(self.q["left"], self.q["right"], self.widths["left"], self.widths["right"])
