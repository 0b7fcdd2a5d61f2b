"""Closed-loop episode runner: schedule, sample a guided chunk, execute, detect."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Literal, Mapping, Sequence

import numpy as np

from ..costs import COST_NAMES, CostParams, KeypointBinding, SafetyCost, grasp_binding
from ..diffusion import GuidanceConfig, NoiseSchedule, ScriptedGaussianDenoiser, sample_guided
from ..errors import SchedulingContractError
from ..geometry import ArmPair
from ..keypoints import KeypointSet, TrackedKeypoint
from ..observation import Observation
from ..scheduler.patterns import CostMask
from ..scheduler.predicates import parse_predicate
from ..scheduler.rules import RuleConfig, StageSpec, StageTracker, make_stage, rule_schedule
from .detectors import DetectorConfig, UnsafeEvent, detect_unsafe
from .scenarios import ScenarioSpec, StageDecl, build_episode, get_scenario

Sink = Callable[[dict], None]


@dataclass(frozen=True)
class PolicyConfig:
    horizon: int = 16  # n, rows per sampled chunk
    execute: int = 6  # m, rows executed before replanning
    spread: float = 0.02  # rad, per-joint spread of the scripted action distribution
    gripper_spread: float = 0.002  # m
    mode: Literal["ddim", "ddpm"] = "ddim"

    def __post_init__(self):
        if not 1 <= self.execute <= self.horizon:
            raise ValueError("policy.execute must lie in [1, horizon]")


@dataclass(frozen=True)
class KeypointNoise:
    noise_std: float = 0.0  # m, isotropic observation noise
    dropout: tuple[tuple[int, int, int], ...] = ()  # (keypoint id, first t, last t) occluded, inclusive
    beta: float = 0.9
    smoothing: bool = False

    def occluded(self, kp_id: int, t: int) -> bool:
        return any(k == kp_id and lo <= t <= hi for k, lo, hi in self.dropout)


@dataclass(frozen=True)
class EpisodeConfig:
    scenario: str
    variant: str | None = None  # label in reports; defaults to guided/baseline
    schedule: NoiseSchedule = field(default_factory=lambda: NoiseSchedule.cosine(10))
    guidance: GuidanceConfig | None = None  # None: scenario rho0 with defaults
    guidance_enabled: bool = True
    disabled_costs: tuple[int, ...] = ()
    weights: tuple[float | None, ...] | None = None  # None entries fall back to the scenario weights
    h0: float | None = None
    lam: float | None = None
    policy: PolicyConfig = PolicyConfig()
    detectors: DetectorConfig = DetectorConfig()
    keypoints: KeypointNoise = KeypointNoise()
    rules: RuleConfig = RuleConfig()
    scheduler: Literal["rules", "remote"] = "rules"
    scheduler_url: str | None = None
    scheduler_timeout: float | None = None
    reinvoke: Literal["per_chunk", "per_stage"] = "per_chunk"
    stages: tuple[StageDecl, ...] | None = None  # None: scenario plan
    arms: ArmPair | None = None
    horizon: int | None = None  # None: scripted length plus the scenario pad

    @property
    def label(self) -> str:
        if self.variant:
            return self.variant
        return "guided" if self.guidance_enabled else "baseline"

    def spec(self) -> ScenarioSpec:
        return get_scenario(self.scenario)

    def guidance_for(self, spec: ScenarioSpec) -> GuidanceConfig:
        return self.guidance if self.guidance is not None else GuidanceConfig(rho0=spec.rho0)


@dataclass
class EpisodeReport:
    scenario: str
    variant: str
    seed: int
    episode: int
    success: bool
    goal_met: bool
    steps: int
    events: list[UnsafeEvent] = field(default_factory=list)
    costs: list[dict] = field(default_factory=list)  # per executed step: {"t", "C1".."C5"}
    fallback_count: int = 0
    stages: list[list[int]] = field(default_factory=list)  # [t, stage id] transitions
    failure: str | None = None

    @property
    def unsafe(self) -> bool:
        return bool(self.events)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario, "variant": self.variant, "seed": self.seed, "episode": self.episode,
            "success": self.success, "goal_met": self.goal_met, "steps": self.steps,
            "events": [e.to_dict() for e in self.events], "costs": self.costs,
            "fallback_count": self.fallback_count, "stages": self.stages, "failure": self.failure,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> EpisodeReport:
        return cls(d["scenario"], d["variant"], int(d["seed"]), int(d["episode"]), bool(d["success"]),
                   bool(d["goal_met"]), int(d["steps"]), [UnsafeEvent.from_dict(e) for e in d["events"]],
                   list(d.get("costs", [])), int(d.get("fallback_count", 0)), list(d.get("stages", [])),
                   d.get("failure"))


class RuleScheduler:
    def __init__(self, cfg: RuleConfig = RuleConfig()):
        self.cfg = cfg
        self.fallbacks = 0

    def schedule(self, stage: StageSpec, obs: Observation) -> CostMask:
        return rule_schedule(stage, obs, self.cfg)


def make_scheduler(cfg: EpisodeConfig):
    if cfg.scheduler == "remote":
        from ..scheduler.remote import RemoteScheduler

        return RemoteScheduler(cfg.scheduler_url, cfg.scheduler_timeout, cfg.rules)
    return RuleScheduler(cfg.rules)


def build_plan(decls: Sequence[StageDecl], spec: ScenarioSpec) -> list[StageSpec]:
    objects = [o.id for o in spec.objects]
    kps = [k.id for k in spec.keypoints]
    return [make_stage(d.id, d.name, d.until, d.expected, d.bindings, objects, kps, d.alignment) for d in decls]


def _binding(arms: ArmPair, arm: str, kp: int, obs: Observation, term: str) -> KeypointBinding:
    if kp in (-1, -2):
        return KeypointBinding.tip("left" if kp == -1 else "right")
    state = obs.keypoints.get(kp)
    if state is None:
        raise SchedulingContractError(term, f"keypoint {kp} is not tracked")
    obj = obs.objects.get(state.object_id)
    if obj is not None and arm in obj.holders:
        return grasp_binding(arms, arm, obs.q[arm], state.xyz, state.label, kp)
    return KeypointBinding(arm, "static", point=state.xyz, label=state.label, id=kp)


def resolve_bindings(mask: CostMask, obs: Observation, arms: ArmPair) -> dict[int, list[KeypointBinding]]:
    """Turn the mask's keypoint ids into cost bindings.

    Object keypoints held by the arm become grasped bindings with the offset
    taken at the current configuration; the rest are world-fixed.
    """
    out = {}
    for index in mask.active:
        term = COST_NAMES[index - 1]
        out[index] = [_binding(arms, arm, kp, obs, term) for arm, kp in mask.points[index].items() if kp is not None]
    return out


def _alignment_axis(obs: Observation, kp: int | None) -> np.ndarray:
    state = obs.keypoints.get(kp) if kp is not None else None
    if state is None or state.object_id not in obs.objects:
        return np.array([0.0, 0.0, 1.0])
    axis = obs.objects[state.object_id].axis
    return axis / np.linalg.norm(axis)


def _round(x, nd=9):
    return [round(float(v), nd) for v in np.ravel(x)]


class _Observer:
    """Keypoint observation channel: ground truth plus noise and scripted dropouts."""

    def __init__(self, scene, noise: KeypointNoise, rng: np.random.Generator):
        self.scene, self.noise, self.rng = scene, noise, rng
        self.tracked = KeypointSet(
            TrackedKeypoint(k.id, k.object_id, k.label, beta=noise.beta, smoothing=noise.smoothing)
            for k in scene.keypoints.values()
        )

    def __call__(self) -> Observation:
        truth = self.scene.keypoint_world()
        seen = {}
        for kp_id in sorted(truth):
            jitter = self.rng.normal(0.0, self.noise.noise_std, 3) if self.noise.noise_std > 0 else 0.0
            if not self.noise.occluded(kp_id, self.scene.t):
                seen[kp_id] = truth[kp_id] + jitter
        poses = {o.id: o.pose for o in self.scene.objects.values()}
        return self.scene.observe(self.tracked.update(poses, seen))


def run_episode(
    cfg: EpisodeConfig,
    seed: int,
    episode: int = 0,
    sink: Sink | None = None,
    scheduler=None,
) -> EpisodeReport:
    """Run one closed-loop episode; module errors end it with a failure report."""
    spec = cfg.spec()
    layout_rng, sample_rng, obs_rng = (np.random.default_rng(s)
                                       for s in np.random.SeedSequence([seed, episode]).spawn(3))
    report = EpisodeReport(spec.name, cfg.label, seed, episode, False, False, 0)
    scheduler = scheduler or make_scheduler(cfg)
    gcfg = cfg.guidance_for(spec)
    weights = tuple(spec.weights if cfg.weights is None else
                    (s if w is None else w for w, s in zip(cfg.weights, spec.weights)))
    h0 = spec.h0 if cfg.h0 is None else cfg.h0
    lam = spec.lam if cfg.lam is None else cfg.lam
    pol = cfg.policy
    stage_masks: dict[int, CostMask] = {}

    def emit(record):
        if sink is not None:
            sink(record)

    try:
        ep = build_episode(spec, layout_rng, cfg.arms)
        scene, demo = ep.scene, ep.demo
        arms = scene.arms
        horizon = cfg.horizon or ep.horizon
        tracker = StageTracker(build_plan(cfg.stages or spec.stages, spec))
        goal = parse_predicate(spec.goal, [o.id for o in spec.objects], [k.id for k in spec.keypoints], "goal")
        observe = _Observer(scene, cfg.keypoints, obs_rng)
        obs, truth = observe(), scene.observe()
        spread = np.full(arms.action_dim, pol.spread)
        spread[-2:] = pol.gripper_spread

        while scene.t < horizon and not report.goal_met:
            stage = tracker.current
            if cfg.reinvoke == "per_stage" and stage.id in stage_masks:
                mask = stage_masks[stage.id]
            else:
                mask = scheduler.schedule(stage, obs)
                stage_masks[stage.id] = mask
            mask = mask.without(cfg.disabled_costs)
            align_kp = mask.points[2].right if 2 in mask.points else None
            params = CostParams(z=tuple(_alignment_axis(obs, align_kp)), h0=h0, lam=lam,
                                d0=obs.dual_grasp_width)
            cost = None
            if mask.active:
                cost = SafetyCost(arms, mask.alpha, resolve_bindings(mask, obs, arms), params, weights)

            idx = np.minimum(np.arange(scene.t + 1, scene.t + 1 + pol.horizon), len(demo) - 1)
            denoiser = ScriptedGaussianDenoiser(demo[idx], spread, cfg.schedule)
            trace: list = []
            chunk = sample_guided(obs, denoiser, cfg.schedule, cost if cfg.guidance_enabled else None, gcfg,
                                  sample_rng, demo[idx].shape, pol.mode, trace)
            terms = cost(chunk).terms if cost is not None else {}
            chunk_costs = {name: round(float(terms.get(name, 0.0)), 9) for name in COST_NAMES}

            for i, row in enumerate(chunk[:pol.execute]):
                scene.step(row)
                prev_truth, truth = truth, scene.observe()
                align_z = _alignment_axis(truth, stage.alignment[1]) if stage.alignment else None
                events = detect_unsafe([prev_truth, truth], cfg.detectors, stage.alignment, align_z)
                report.events.extend(events)
                obs = observe()
                tracker.advance(obs)
                report.costs.append({"t": scene.t, **chunk_costs})
                record = {
                    "type": "step", "scenario": spec.name, "variant": cfg.label, "seed": seed,
                    "episode": episode, "t": scene.t, "stage": stage.id,
                    "action": _round(row),
                    "keypoints": {str(k): {"xyz": _round(s.xyz), "provenance": s.provenance}
                                  for k, s in sorted(obs.keypoints.items())},
                    "mask": mask.as_list(),
                    "points": {COST_NAMES[j - 1]: [p.left, p.right] for j, p in sorted(mask.points.items())},
                    "costs": chunk_costs,
                    "events": [e.to_dict() for e in events],
                    "tip_distance": round(truth.tip_distance(), 9),
                }
                if i == 0:
                    record["denoise"] = [{"k": d["k"], "value": round(d["value"], 9), "rho": round(d["rho"], 9),
                                          "grad_norm": round(d["grad_norm"], 9)} for d in trace]
                emit(record)
                if scene.t >= len(demo) - 1 and goal(truth):
                    report.goal_met = True
                    break
                if scene.t >= horizon:
                    break
        report.steps = scene.t
        report.stages = [[t, s] for t, s in tracker.transitions]
    except (ValueError, ArithmeticError, RuntimeError, LookupError) as exc:
        report.failure = f"{type(exc).__name__}: {exc}"
        report.steps = len(report.costs)
    report.fallback_count = int(getattr(scheduler, "fallbacks", 0))
    report.success = report.goal_met and not report.events and report.failure is None
    emit({"type": "episode", **report.to_dict()})
    return report


def _run_one(args):
    cfg, seed, episode = args
    records: list[dict] = []
    report = run_episode(cfg, seed, episode, records.append)
    return report, records


def run_batch(
    cfg: EpisodeConfig,
    seed: int,
    episodes: int,
    sink_for: Callable[[int], Sink | None] | None = None,
    workers: int = 1,
) -> list[EpisodeReport]:
    """Episodes ``0..episodes-1`` seeded from ``(seed, index)``; output order is by index."""
    if workers <= 1:
        return [run_episode(cfg, seed, i, sink_for(i) if sink_for else None) for i in range(episodes)]
    reports = []
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for i, (report, records) in enumerate(pool.map(_run_one, [(cfg, seed, i) for i in range(episodes)])):
            sink = sink_for(i) if sink_for else None
            if sink is not None:
                for r in records:
                    sink(r)
            reports.append(report)
    return reports


def with_overrides(cfg: EpisodeConfig, **changes: Any) -> EpisodeConfig:
    return replace(cfg, **changes)
