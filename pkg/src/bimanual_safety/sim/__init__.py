"""Kinematic two-arm tabletop simulator, detectors and episode runner."""
from .detectors import DetectorConfig, UnsafeEvent, detect_unsafe
from .metrics import Metrics, PairedComparison, metrics, paired
from .runner import EpisodeConfig, EpisodeReport, KeypointNoise, PolicyConfig, run_batch, run_episode
from .scenarios import SCENARIOS, build_episode, default_arms, get_scenario
from .scene import Scene, SceneObject

__all__ = [
    "DetectorConfig", "EpisodeConfig", "EpisodeReport", "KeypointNoise", "Metrics", "PairedComparison",
    "PolicyConfig", "SCENARIOS", "Scene", "SceneObject", "UnsafeEvent", "build_episode", "default_arms",
    "detect_unsafe", "get_scenario", "metrics", "paired", "run_batch", "run_episode",
]
