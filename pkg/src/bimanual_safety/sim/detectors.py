"""Unsafe-event detectors over consecutive scene snapshots."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from ..errors import ContractError
from ..observation import Observation
from ..scheduler.patterns import UnsafePattern

ARMS = ("left", "right")


@dataclass(frozen=True)
class DetectorConfig:
    d_align: float = 0.03  # m, planar misalignment during an alignment stage
    d_tear: float = 0.04  # m, tip-distance deviation while both arms hold one object
    poke_tolerance: float = 0.02  # m, lateral keypoint offset at contact with an open gripper
    tip_radius: float = 0.015  # m, clearance sphere around each tip

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value > 0:
                raise ContractError(f"detector threshold {name} must be > 0")


@dataclass(frozen=True)
class UnsafeEvent:
    kind: UnsafePattern
    t: int
    value: float
    threshold: float
    units: str = "m"
    detail: str = ""

    def to_dict(self) -> dict:
        return {"kind": self.kind.short, "t": self.t, "value": round(self.value, 9),
                "threshold": self.threshold, "units": self.units, "detail": self.detail}

    @classmethod
    def from_dict(cls, d: dict) -> UnsafeEvent:
        return cls(UnsafePattern.parse(d["kind"]), int(d["t"]), float(d["value"]), float(d["threshold"]),
                   d.get("units", "m"), d.get("detail", ""))


def _min_gap(a0, a1, b0, b1) -> float:
    """Smallest distance between two points moving linearly over one step."""
    d0 = np.asarray(a0) - np.asarray(b0)
    dv = (np.asarray(a1) - np.asarray(b1)) - d0
    vv = float(dv @ dv)
    s = 0.0 if vv < 1e-18 else float(np.clip(-(d0 @ dv) / vv, 0.0, 1.0))
    return float(np.linalg.norm(d0 + s * dv))


def lateral_offset(point, tip, axis) -> float:
    v = np.asarray(point) - np.asarray(tip)
    return float(np.linalg.norm(v - (v @ axis) * axis))


def projected_distance(a, b, z) -> float:
    v = np.asarray(a) - np.asarray(b)
    return float(np.linalg.norm(v - (v @ z) * z))


def detect_unsafe(
    window: Sequence[Observation],
    cfg: DetectorConfig = DetectorConfig(),
    alignment: tuple[int, int] | None = None,
    align_axis=None,
) -> list[UnsafeEvent]:
    """Events at the last snapshot of ``window`` (consecutive, oldest first).

    Collisions use the swept minimum over the step; poking requires the tip to
    be closing in on the object; misalignment is checked only when
    ``alignment`` names the keypoint pair of an alignment stage.
    """
    if len(window) < 2:
        raise ContractError("detector window needs at least two snapshots")
    prev, cur = window[-2], window[-1]
    t = cur.t
    events: list[UnsafeEvent] = []

    ids = sorted(cur.objects)
    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            oa, ob = cur.objects[a], cur.objects[b]
            pa, pb = prev.objects[a], prev.objects[b]
            gap = _min_gap(pa.center, oa.center, pb.center, ob.center)
            limit = oa.radius + ob.radius
            if gap < limit:
                events.append(UnsafeEvent(UnsafePattern.ObjectObjectCollision, t, gap, limit,
                                          detail=f"{a}/{b}"))

    gap = _min_gap(prev.tips["left"], cur.tips["left"], prev.tips["right"], cur.tips["right"])
    if gap < 2 * cfg.tip_radius:
        events.append(UnsafeEvent(UnsafePattern.GripperGripperCollision, t, gap, 2 * cfg.tip_radius))

    for arm in ARMS:
        if cur.closed[arm]:
            continue
        tip, axis = cur.tips[arm], cur.tip_axes[arm]
        for obj in cur.objects.values():
            if arm in obj.holders:
                continue
            dist = float(np.linalg.norm(tip - obj.center))
            before = float(np.linalg.norm(prev.tips[arm] - prev.objects[obj.id].center))
            if dist > obj.radius or dist >= before:
                continue
            targets = [k.xyz for k in cur.keypoints.values() if k.object_id == obj.id]
            target = min(targets, key=lambda p: np.linalg.norm(p - tip)) if targets else obj.center
            off = lateral_offset(target, tip, axis)
            if off > cfg.poke_tolerance:
                events.append(UnsafeEvent(UnsafePattern.GripperPoking, t, off, cfg.poke_tolerance,
                                          detail=f"{arm}/{obj.id}"))

    if alignment is not None:
        ka, kb = alignment
        z = np.asarray(align_axis if align_axis is not None else (0.0, 0.0, 1.0), dtype=float)
        d = projected_distance(cur.keypoints[ka].xyz, cur.keypoints[kb].xyz, z)
        if d > cfg.d_align:
            events.append(UnsafeEvent(UnsafePattern.BehaviorMisalignment, t, d, cfg.d_align,
                                      detail=f"{ka}/{kb}"))

    for obj in cur.objects.values():
        if len(obj.holders) == 2 and cur.dual_grasp_width is not None:
            dev = abs(cur.tip_distance() - cur.dual_grasp_width)
            if dev > cfg.d_tear:
                events.append(UnsafeEvent(UnsafePattern.GripperTearing, t, dev, cfg.d_tear, detail=obj.id))
    return events
