"""Structured scene snapshot consumed by the scheduler and the detectors."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True, eq=False)
class ObjectState:
    id: str
    center: np.ndarray
    radius: float
    axis: np.ndarray  # principal (z) axis of the object pose
    holders: tuple[str, ...] = ()
    prev_center: np.ndarray | None = None

    def displacement(self) -> float:
        if self.prev_center is None:
            return 0.0
        return float(np.linalg.norm(self.center - self.prev_center))


@dataclass(frozen=True, eq=False)
class KeypointState:
    id: int
    xyz: np.ndarray
    object_id: str | None
    label: str = ""
    provenance: str = "observed"


@dataclass(frozen=True, eq=False)
class Observation:
    t: int
    q: dict[str, np.ndarray]
    tips: dict[str, np.ndarray]
    tip_axes: dict[str, np.ndarray]
    prev_tips: dict[str, np.ndarray]
    widths: dict[str, float]
    closed: dict[str, bool]
    objects: dict[str, ObjectState]
    keypoints: dict[int, KeypointState] = field(default_factory=dict)
    dual_grasp_width: float | None = None

    def holding(self, arm: str) -> str | None:
        for obj in self.objects.values():
            if arm in obj.holders:
                return obj.id
        return None

    def tip_distance(self) -> float:
        return float(np.linalg.norm(self.tips["left"] - self.tips["right"]))

    def prev_tip_distance(self) -> float:
        return float(np.linalg.norm(self.prev_tips["left"] - self.prev_tips["right"]))

    def point(self, ref) -> np.ndarray:
        """Resolve a keypoint id (``-1``/``-2`` are the tips), ``*_tip`` name, or object id."""
        if ref in (-1, "-1", "left_tip"):
            return self.tips["left"]
        if ref in (-2, "-2", "right_tip"):
            return self.tips["right"]
        if isinstance(ref, (int, np.integer)):
            return self.keypoints[int(ref)].xyz
        if isinstance(ref, str) and ref.lstrip("-").isdigit():
            return self.keypoints[int(ref)].xyz
        return self.objects[ref].center
