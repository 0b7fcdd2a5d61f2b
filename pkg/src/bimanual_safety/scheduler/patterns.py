"""Unsafe-pattern taxonomy and the cost mask the scheduler emits."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from ..errors import SchedulingContractError


class UnsafePattern(enum.Enum):
    """The five taxonomy categories; the value is the index of the matching cost."""

    ObjectObjectCollision = 1
    BehaviorMisalignment = 2
    GripperPoking = 3
    GripperTearing = 4
    GripperGripperCollision = 5

    @property
    def cost_index(self) -> int:
        return self.value

    @property
    def short(self) -> str:
        return SHORT_NAMES[self]

    @property
    def guidance_key(self) -> str:
        return GUIDANCE_KEYS[self]

    @classmethod
    def parse(cls, name: str) -> UnsafePattern:
        key = str(name).strip()
        for pattern in cls:
            if key in (pattern.name, pattern.short, pattern.guidance_key):
                return pattern
        raise ValueError(f"unknown unsafe pattern {name!r}")


SHORT_NAMES = {
    UnsafePattern.ObjectObjectCollision: "object_collision",
    UnsafePattern.BehaviorMisalignment: "misalignment",
    UnsafePattern.GripperPoking: "poking",
    UnsafePattern.GripperTearing: "tearing",
    UnsafePattern.GripperGripperCollision: "gripper_collision",
}

# Field names of the guidance document exchanged with a remote scheduler.
GUIDANCE_KEYS = {
    UnsafePattern.GripperPoking: "enable_poking_guidance",
    UnsafePattern.ObjectObjectCollision: "enable_collision_guidance",
    UnsafePattern.GripperGripperCollision: "enable_gripper_collision_guidance",
    UnsafePattern.GripperTearing: "enable_tear_guidance",
    UnsafePattern.BehaviorMisalignment: "enable_align_guidance",
}

TIP_IDS = {"left": -1, "right": -2}


@dataclass(frozen=True)
class ArmPoints:
    """Keypoint id assigned to each arm for one cost term (``None``: arm not involved)."""

    left: int | None = None
    right: int | None = None

    def items(self):
        return (("left", self.left), ("right", self.right))

    def any(self) -> bool:
        return self.left is not None or self.right is not None


TIPS = ArmPoints(TIP_IDS["left"], TIP_IDS["right"])


@dataclass(frozen=True)
class CostMask:
    """Binary activation over C1-C5 with the keypoint assignment of each active term."""

    alpha: tuple[bool, bool, bool, bool, bool] = (False,) * 5
    points: Mapping[int, ArmPoints] = field(default_factory=dict)
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        alpha = tuple(bool(a) for a in self.alpha)
        if len(alpha) != 5:
            raise ValueError("alpha needs five entries")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "points", dict(self.points))
        for index, on in enumerate(alpha, start=1):
            if not on:
                continue
            pts = self.points.get(index)
            name = f"C{index}"
            if pts is None or not pts.any():
                raise SchedulingContractError(name, "active term has no keypoint assignment")
            if index != 3 and (pts.left is None or pts.right is None):
                raise SchedulingContractError(name, "pairwise term needs a keypoint on each arm")

    @classmethod
    def empty(cls) -> CostMask:
        return cls()

    @property
    def active(self) -> list[int]:
        return [i for i, on in enumerate(self.alpha, start=1) if on]

    @property
    def patterns(self) -> list[UnsafePattern]:
        return [UnsafePattern(i) for i in self.active]

    def as_list(self) -> list[int]:
        return [int(a) for a in self.alpha]

    def without(self, disabled: Iterable[int]) -> CostMask:
        disabled = set(disabled)
        alpha = tuple(on and i not in disabled for i, on in enumerate(self.alpha, start=1))
        points = {i: p for i, p in self.points.items() if alpha[i - 1]}
        return CostMask(alpha, points, self.params)
