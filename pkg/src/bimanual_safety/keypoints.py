"""World-frame keypoint bookkeeping with static-offset reconstruction.

Each tracked keypoint stores its coordinates in its object's frame. While the
keypoint is visible the offset is (re)initialized or exponentially smoothed;
while it is occluded the world position is rebuilt from the object pose.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Mapping

import numpy as np

from .errors import ContractError, TrackingError
from .geometry import Pose

MIN_SPACING = 0.04

OBSERVED = "observed"
SMOOTHED = "smoothed"
RECONSTRUCTED = "reconstructed"


@dataclass(frozen=True, eq=False)
class TrackedKeypoint:
    id: int
    object_id: str
    label: str = ""
    offset: np.ndarray | None = None  # keypoint in the object frame
    last_world: np.ndarray | None = None
    beta: float = 0.9
    smoothing: bool = False

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ContractError(f"keypoint {self.id}: beta must lie in [0, 1]")
        if self.offset is not None and not np.all(np.isfinite(self.offset)):
            raise ContractError(f"keypoint {self.id}: offset must be finite")


def init_offset(kp: TrackedKeypoint, observed, object_pose: Pose) -> TrackedKeypoint:
    observed = np.asarray(observed, dtype=float)
    return replace(kp, offset=object_pose.inverse().apply(observed), last_world=observed)


def reconstruct(kp: TrackedKeypoint, object_pose: Pose) -> np.ndarray:
    if kp.offset is None:
        raise TrackingError(kp.id)
    return object_pose.apply(kp.offset)


def smooth_update(kp: TrackedKeypoint, observed, object_pose: Pose) -> TrackedKeypoint:
    if kp.offset is None:
        raise TrackingError(kp.id)
    observed = np.asarray(observed, dtype=float)
    fresh = object_pose.inverse().apply(observed)
    return replace(kp, offset=kp.beta * kp.offset + (1.0 - kp.beta) * fresh, last_world=observed)


def check_spacing(points: Mapping[int, np.ndarray], min_spacing: float = MIN_SPACING) -> list[str]:
    """Pairs of object keypoints closer than ``min_spacing`` (empty when valid)."""
    ids = sorted(points)
    problems = []
    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            gap = float(np.linalg.norm(np.asarray(points[a]) - np.asarray(points[b])))
            if gap < min_spacing:
                problems.append(f"keypoints {a} and {b} are {gap:.4f} m apart (< {min_spacing} m)")
    return problems


class KeypointSet:
    """Tracked object keypoints of one episode, keyed by id.

    Gripper tips are not tracked here; they come from forward kinematics.
    """

    def __init__(self, keypoints: Iterable[TrackedKeypoint]):
        self._kps: dict[int, TrackedKeypoint] = {}
        for kp in keypoints:
            if kp.id in self._kps:
                raise ContractError(f"duplicate keypoint id {kp.id}")
            if kp.id in (-1, -2):
                raise ContractError("ids -1 and -2 are reserved for the gripper tips")
            self._kps[kp.id] = kp

    def __getitem__(self, kp_id: int) -> TrackedKeypoint:
        return self._kps[kp_id]

    def __contains__(self, kp_id) -> bool:
        return kp_id in self._kps

    def __iter__(self):
        return iter(self._kps.values())

    def ids(self) -> list[int]:
        return list(self._kps)

    def update(
        self,
        object_poses: Mapping[str, Pose],
        observations: Mapping[int, np.ndarray | None],
    ) -> dict[int, tuple[np.ndarray, str]]:
        """Fold in one frame of observations; return ``{id: (world xyz, provenance)}``.

        A missing or ``None`` observation marks the keypoint occluded for this frame.
        """
        out = {}
        for kp_id, kp in self._kps.items():
            pose = object_poses[kp.object_id]
            obs = observations.get(kp_id)
            if obs is None:
                out[kp_id] = (reconstruct(kp, pose), RECONSTRUCTED)
                continue
            if kp.offset is None or not kp.smoothing:
                kp = init_offset(kp, obs, pose)
                out[kp_id] = (np.asarray(obs, dtype=float), OBSERVED)
            else:
                kp = smooth_update(kp, obs, pose)
                out[kp_id] = (reconstruct(kp, pose), SMOOTHED)
            self._kps[kp_id] = kp
        return out
