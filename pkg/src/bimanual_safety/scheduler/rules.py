"""Stage tracking and the deterministic rule-based cost scheduler."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..errors import PlanValidationError, SchedulingContractError
from ..observation import Observation
from .patterns import TIPS, ArmPoints, CostMask, UnsafePattern
from .predicates import Predicate, parse_predicate


@dataclass(frozen=True, eq=False)
class StageSpec:
    """One task stage.

    ``bindings`` lists the patterns this stage may schedule, with the keypoint
    ids each arm uses for the matching cost. ``expected`` is the fallback when
    no rule fires (empty: schedule nothing). ``until`` is the termination
    predicate; ``None`` means the stage never ends.
    """

    id: int
    name: str
    until: Predicate | None = None
    expected: tuple[UnsafePattern, ...] = ()
    bindings: Mapping[UnsafePattern, ArmPoints] = field(default_factory=dict)
    alignment: tuple[int, int] | None = None  # keypoint pair checked by the misalignment detector


def make_stage(
    id: int,
    name: str,
    until: str | None = None,
    expected: Sequence[str | UnsafePattern] = (),
    bindings: Mapping[str | UnsafePattern, Sequence | ArmPoints] | None = None,
    objects: Iterable[str] = (),
    keypoints: Iterable[int] = (),
    alignment: tuple[int, int] | None = None,
) -> StageSpec:
    """Build a stage from plain values, validating references to the scene."""
    where = f"stage {id} ({name})"
    objects, keypoints = list(objects), list(keypoints)
    pred = parse_predicate(until, objects, keypoints, where) if until else None
    binds: dict[UnsafePattern, ArmPoints] = {}
    for key, pts in (bindings or {}).items():
        pattern = key if isinstance(key, UnsafePattern) else UnsafePattern.parse(key)
        if not isinstance(pts, ArmPoints):
            pts = ArmPoints(*[None if p is None else int(p) for p in pts])
        for arm, kp in pts.items():
            if kp is not None and kp not in (-1, -2) and kp not in keypoints:
                raise PlanValidationError(f"{where}: {pattern.short} binding for {arm} arm "
                                          f"references undeclared keypoint {kp}")
        binds[pattern] = pts
    exp = tuple(p if isinstance(p, UnsafePattern) else UnsafePattern.parse(p) for p in expected)
    for p in exp:
        if p not in binds:
            raise PlanValidationError(f"{where}: expected pattern {p.short} has no bindings")
    if alignment is not None:
        for kp in alignment:
            if kp not in keypoints:
                raise PlanValidationError(f"{where}: alignment references undeclared keypoint {kp}")
    return StageSpec(id, name, pred, exp, binds, tuple(alignment) if alignment else None)


def validate_plan(plan: Sequence[StageSpec]) -> None:
    if not plan:
        raise PlanValidationError("stage plan is empty")
    ids = [s.id for s in plan]
    if ids[0] < 1 or any(b <= a for a, b in zip(ids, ids[1:])):
        raise PlanValidationError(f"stage ids must be >= 1 and strictly increasing, got {ids}")


class StageTracker:
    """Latched stage progression: at most one advance per call, never backwards."""

    def __init__(self, plan: Sequence[StageSpec]):
        validate_plan(plan)
        self.plan = list(plan)
        self.index = 0
        self.transitions: list[tuple[int, int]] = []  # (t, new stage id)

    @property
    def current(self) -> StageSpec:
        return self.plan[self.index]

    @property
    def is_final(self) -> bool:
        return self.index == len(self.plan) - 1

    def advance(self, obs: Observation) -> StageSpec:
        stage = self.current
        if not self.is_final and stage.until is not None and stage.until(obs):
            self.index += 1
            self.transitions.append((obs.t, self.current.id))
        return self.current


def advance_stage(plan: Sequence[StageSpec], index: int, obs: Observation) -> int:
    """Functional form of :meth:`StageTracker.advance`; returns the new stage index."""
    validate_plan(plan)
    stage = plan[index]
    if index < len(plan) - 1 and stage.until is not None and stage.until(obs):
        return index + 1
    return index


@dataclass(frozen=True)
class RuleConfig:
    approach_radius: float = 0.2  # m, tip-to-keypoint distance that counts as a grasp approach
    motion_eps: float = 1e-3  # m per step; "moving" threshold
    converge_radius: float = 0.35  # m, tip distance below which convergence matters


def _poking_arms(stage: StageSpec, obs: Observation, cfg: RuleConfig) -> list[str]:
    pts = stage.bindings.get(UnsafePattern.GripperPoking)
    if pts is None:
        return []
    arms = []
    for arm, kp in pts.items():
        if kp is None or obs.closed[arm] or obs.holding(arm) is not None:
            continue
        if kp in obs.keypoints and np.linalg.norm(obs.tips[arm] - obs.point(kp)) <= cfg.approach_radius:
            arms.append(arm)
    return arms


def identify_pattern_rules(stage: StageSpec, obs: Observation, cfg: RuleConfig = RuleConfig()) -> UnsafePattern | None:
    """Most likely unsafe pattern for ``stage`` in the scene, by fixed rule priority.

    A rule can only fire for patterns the stage declares bindings for. When no
    rule fires the first ``expected`` pattern is returned (``None`` if empty).
    """
    declared = stage.bindings
    held_l, held_r = obs.holding("left"), obs.holding("right")

    if UnsafePattern.GripperPoking in declared and _poking_arms(stage, obs, cfg):
        return UnsafePattern.GripperPoking

    if (UnsafePattern.GripperTearing in declared and obs.closed["left"] and obs.closed["right"]
            and held_l is not None and held_l == held_r):
        return UnsafePattern.GripperTearing

    if UnsafePattern.GripperGripperCollision in declared:
        failed = any(obs.closed[a] and obs.holding(a) is None for a in ("left", "right"))
        nothing_held = held_l is None and held_r is None
        dist = obs.tip_distance()
        converging = dist < cfg.converge_radius and obs.prev_tip_distance() - dist > cfg.motion_eps
        if (failed or nothing_held) and converging:
            return UnsafePattern.GripperGripperCollision

    if (UnsafePattern.ObjectObjectCollision in declared and held_l is not None and held_r is not None
            and held_l != held_r):
        moving = all(obs.objects[o].displacement() > cfg.motion_eps for o in (held_l, held_r))
        if moving:
            return UnsafePattern.ObjectObjectCollision

    if UnsafePattern.BehaviorMisalignment in declared:
        return UnsafePattern.BehaviorMisalignment

    return stage.expected[0] if stage.expected else None


def schedule_costs(
    patterns: UnsafePattern | Iterable[UnsafePattern] | None,
    stage: StageSpec,
    obs: Observation | None = None,
    cfg: RuleConfig = RuleConfig(),
) -> CostMask:
    """Mask activating the cost of each pattern with the stage's keypoints.

    For poking, when ``obs`` is given only arms actually approaching keep their
    binding (falling back to every declared arm if none qualifies).
    """
    if patterns is None:
        return CostMask.empty()
    if isinstance(patterns, UnsafePattern):
        patterns = [patterns]
    alpha = [False] * 5
    points: dict[int, ArmPoints] = {}
    for pattern in patterns:
        pts = stage.bindings.get(pattern)
        if pts is None and pattern in (UnsafePattern.GripperTearing, UnsafePattern.GripperGripperCollision):
            pts = TIPS
        if pts is None or not pts.any():
            raise SchedulingContractError(f"C{pattern.cost_index}",
                                          f"stage {stage.id} declares no keypoints for {pattern.short}")
        if pattern is UnsafePattern.GripperPoking and obs is not None:
            arms = _poking_arms(stage, obs, cfg)
            if arms:
                pts = ArmPoints(pts.left if "left" in arms else None, pts.right if "right" in arms else None)
        alpha[pattern.cost_index - 1] = True
        points[pattern.cost_index] = pts
    return CostMask(tuple(alpha), points)


def rule_schedule(stage: StageSpec, obs: Observation, cfg: RuleConfig = RuleConfig()) -> CostMask:
    return schedule_costs(identify_pattern_rules(stage, obs, cfg), stage, obs, cfg)
