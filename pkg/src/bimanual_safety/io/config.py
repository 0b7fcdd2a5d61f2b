"""Run configuration: YAML schema, whole-document validation, dotted overrides."""
from __future__ import annotations

import os
from dataclasses import field
from typing import Any, Literal, Optional

import numpy as np
import yaml
from pydantic import ConfigDict, TypeAdapter, ValidationError
from pydantic.dataclasses import dataclass

from ..diffusion import GuidanceConfig, NoiseSchedule
from ..errors import ContractError, PlanValidationError
from ..geometry import ArmPair, Joint, Pose, SerialChain
from ..scheduler.patterns import UnsafePattern
from ..scheduler.predicates import parse_predicate
from ..scheduler.remote import URL_ENV
from ..scheduler.rules import RuleConfig
from ..sim.detectors import DetectorConfig
from ..sim.runner import EpisodeConfig, KeypointNoise, PolicyConfig
from ..sim.scenarios import SCENARIOS, StageDecl, default_arms

STRICT = ConfigDict(extra="forbid")
Vec3 = tuple[float, float, float]


@dataclass(config=STRICT)
class ScheduleSection:
    kind: Literal["cosine", "linear"] = "cosine"
    steps: int = 10
    eta: float = 0.0
    beta_start: float = 1e-4
    beta_end: float = 0.02


@dataclass(config=STRICT)
class GuidanceSection:
    enabled: bool = True
    rho0: Optional[float] = None  # None: the scenario's default strength
    guided_steps: Optional[int] = None
    grad_clip: Optional[float] = None
    rho_schedule: Literal["scaled", "constant"] = "scaled"
    guide_grippers: tuple[bool, bool] = (False, False)
    disabled_costs: list[int] = field(default_factory=list)


@dataclass(config=STRICT)
class PolicySection:
    horizon: int = 16
    execute: int = 6
    spread: float = 0.02
    gripper_spread: float = 0.002
    mode: Literal["ddim", "ddpm"] = "ddim"


@dataclass(config=STRICT)
class WeightsSection:
    C1: Optional[float] = None
    C2: Optional[float] = None
    C3: Optional[float] = None
    C4: Optional[float] = None
    C5: Optional[float] = None


@dataclass(config=STRICT)
class CostsSection:
    weights: WeightsSection = field(default_factory=WeightsSection)
    h0: Optional[float] = None
    lam: Optional[float] = None


@dataclass(config=STRICT)
class SchedulerSection:
    mode: Literal["rules", "remote"] = "rules"
    url: Optional[str] = None
    timeout: Optional[float] = None
    reinvoke: Literal["per_chunk", "per_stage"] = "per_chunk"
    approach_radius: float = 0.2
    motion_eps: float = 1e-3
    converge_radius: float = 0.35


@dataclass(config=STRICT)
class DetectorSection:
    d_align: float = 0.03
    d_tear: float = 0.04
    poke_tolerance: float = 0.02
    tip_radius: float = 0.015


@dataclass(config=STRICT)
class DropoutWindow:
    id: int
    start: int
    end: int


@dataclass(config=STRICT)
class KeypointSection:
    beta: float = 0.9
    smoothing: bool = False
    noise_std: float = 0.0
    dropout: list[DropoutWindow] = field(default_factory=list)


@dataclass(config=STRICT)
class FrameSection:
    xyz: Vec3 = (0.0, 0.0, 0.0)
    rpy: Vec3 = (0.0, 0.0, 0.0)


@dataclass(config=STRICT)
class JointSection:
    axis: Vec3
    xyz: Vec3 = (0.0, 0.0, 0.0)
    rpy: Vec3 = (0.0, 0.0, 0.0)
    limits: tuple[float, float] = (-3.141592653589793, 3.141592653589793)


@dataclass(config=STRICT)
class ChainSection:
    joints: list[JointSection]
    base: FrameSection = field(default_factory=FrameSection)
    tip: FrameSection = field(default_factory=FrameSection)


@dataclass(config=STRICT)
class ChainsSection:
    left: ChainSection
    right: ChainSection


@dataclass(config=STRICT)
class StageSection:
    id: int
    name: str
    until: Optional[str] = None
    expected: list[str] = field(default_factory=list)
    bindings: dict[str, tuple[Optional[int], Optional[int]]] = field(default_factory=dict)
    alignment: Optional[tuple[int, int]] = None


@dataclass(config=STRICT)
class OutputSection:
    dir: str = "runs/default"


@dataclass(config=STRICT)
class RunConfig:
    scenario: str
    episodes: int = 10
    seed: int = 0
    label: Optional[str] = None
    workers: int = 1
    horizon: Optional[int] = None
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    guidance: GuidanceSection = field(default_factory=GuidanceSection)
    policy: PolicySection = field(default_factory=PolicySection)
    costs: CostsSection = field(default_factory=CostsSection)
    scheduler: SchedulerSection = field(default_factory=SchedulerSection)
    detectors: DetectorSection = field(default_factory=DetectorSection)
    keypoints: KeypointSection = field(default_factory=KeypointSection)
    chains: Optional[ChainsSection] = None
    stages: Optional[list[StageSection]] = None
    output: OutputSection = field(default_factory=OutputSection)


_ADAPTER = TypeAdapter(RunConfig)


class ConfigError(ValueError):
    """Every problem found in a configuration, one ``path: message`` line each."""

    def __init__(self, errors: list[str], source: str | None = None):
        self.errors = list(errors)
        self.source = source
        head = f"{source}: " if source else ""
        super().__init__(head + f"{len(errors)} configuration error(s)\n  " + "\n  ".join(errors))


def _node_marks(node, prefix=()) -> dict[tuple, tuple[int, int]]:
    """Map key paths of a composed YAML node to 1-based (line, column)."""
    marks = {prefix: (node.start_mark.line + 1, node.start_mark.column + 1)}
    if isinstance(node, yaml.MappingNode):
        for key, value in node.value:
            marks.update(_node_marks(value, prefix + (key.value,)))
    elif isinstance(node, yaml.SequenceNode):
        for i, value in enumerate(node.value):
            marks.update(_node_marks(value, prefix + (str(i),)))
    return marks


def _where(path: tuple, marks: dict) -> str:
    dotted = ".".join(str(p) for p in path) or "<root>"
    for cut in range(len(path), -1, -1):
        mark = marks.get(tuple(str(p) for p in path[:cut]))
        if mark:
            return f"{dotted} (line {mark[0]}, column {mark[1]})"
    return dotted


def parse_yaml(text: str, source: str = "<config>") -> tuple[dict, dict]:
    try:
        data = yaml.safe_load(text)
        node = yaml.compose(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError([f"YAML parse error at {where}: {exc.problem}"], source) from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(["<root>: configuration must be a mapping"], source)
    return data, (_node_marks(node) if node is not None else {})


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``a.b.c=value`` overrides; values are parsed as YAML scalars or flow collections."""
    data = dict(data)
    for item in overrides:
        if "=" not in item:
            raise ConfigError([f"override {item!r}: expected dotted.path=value"])
        path, raw = item.split("=", 1)
        keys = [k for k in path.strip().split(".") if k]
        if not keys:
            raise ConfigError([f"override {item!r}: empty path"])
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError:
            value = raw
        node = data
        for key in keys[:-1]:
            if isinstance(node, list):
                node = node[int(key)]
                continue
            child = node.get(key)
            node[key] = dict(child) if isinstance(child, dict) else ({} if child is None else child)
            node = node[key]
        if isinstance(node, list):
            node[int(keys[-1])] = value
        else:
            node[keys[-1]] = value
    return data


def _semantic_errors(cfg: RunConfig, marks: dict) -> list[str]:
    errors = []

    def err(path: tuple, message: str):
        errors.append(f"{_where(path, marks)}: {message}")

    spec = SCENARIOS.get(cfg.scenario)
    if spec is None:
        err(("scenario",), f"unknown scenario {cfg.scenario!r}; choose from {sorted(SCENARIOS)}")
    if cfg.episodes < 1:
        err(("episodes",), "must be >= 1")
    if cfg.workers < 1:
        err(("workers",), "must be >= 1")
    if cfg.schedule.steps < 1:
        err(("schedule", "steps"), "must be >= 1")
    elif cfg.guidance.guided_steps is not None and cfg.guidance.guided_steps > cfg.schedule.steps:
        err(("guidance", "guided_steps"), f"M={cfg.guidance.guided_steps} exceeds K={cfg.schedule.steps}")
    try:
        _schedule(cfg.schedule)
    except (ContractError, ValueError) as exc:
        err(("schedule",), str(exc))
    try:
        _guidance(cfg.guidance, 1.0)
    except ContractError as exc:
        err(("guidance",), str(exc))
    for i, c in enumerate(cfg.guidance.disabled_costs):
        if c not in range(1, 6):
            err(("guidance", "disabled_costs", i), f"cost index {c} is not in 1..5")
    if not 1 <= cfg.policy.execute <= cfg.policy.horizon:
        err(("policy", "execute"), f"must lie in [1, horizon={cfg.policy.horizon}]")
    if cfg.policy.spread < 0 or cfg.policy.gripper_spread < 0:
        err(("policy",), "spreads must be >= 0")
    try:
        _detectors(cfg.detectors)
    except ContractError as exc:
        err(("detectors",), str(exc))
    if not 0.0 <= cfg.keypoints.beta <= 1.0:
        err(("keypoints", "beta"), "must lie in [0, 1]")
    if cfg.keypoints.noise_std < 0:
        err(("keypoints", "noise_std"), "must be >= 0")
    if cfg.scheduler.mode == "remote" and not (cfg.scheduler.url or os.environ.get(URL_ENV)):
        err(("scheduler", "url"), f"remote mode needs a URL (or ${URL_ENV})")
    if cfg.chains is not None:
        for arm in ("left", "right"):
            try:
                _chain(getattr(cfg.chains, arm), arm)
            except (ContractError, ValueError) as exc:
                err(("chains", arm), str(exc))
    if spec is None:
        return errors

    objects = [o.id for o in spec.objects]
    kps = [k.id for k in spec.keypoints]
    for i, w in enumerate(cfg.keypoints.dropout):
        if w.id not in kps:
            err(("keypoints", "dropout", i, "id"), f"undeclared keypoint {w.id} (declared: {kps})")
        if w.end < w.start:
            err(("keypoints", "dropout", i), "end must be >= start")
    if cfg.stages is not None:
        if not cfg.stages:
            err(("stages",), "stage plan is empty")
        ids = [s.id for s in cfg.stages]
        if any(b <= a for a, b in zip(ids, ids[1:])) or (ids and ids[0] < 1):
            err(("stages",), f"stage ids must be >= 1 and strictly increasing, got {ids}")
        for i, st in enumerate(cfg.stages):
            if st.until:
                try:
                    parse_predicate(st.until, objects, kps, f"stage {st.id}")
                except PlanValidationError as exc:
                    err(("stages", i, "until"), str(exc))
            for name, pts in st.bindings.items():
                try:
                    UnsafePattern.parse(name)
                except ValueError as exc:
                    err(("stages", i, "bindings", name), str(exc))
                    continue
                for arm, kp in zip(("left", "right"), pts):
                    if kp is not None and kp not in (-1, -2) and kp not in kps:
                        err(("stages", i, "bindings", name), f"{arm} arm references undeclared keypoint {kp}")
            for j, name in enumerate(st.expected):
                try:
                    pattern = UnsafePattern.parse(name)
                except ValueError as exc:
                    err(("stages", i, "expected", j), str(exc))
                    continue
                if not any(_same_pattern(pattern, b) for b in st.bindings):
                    err(("stages", i, "expected", j), f"{name} has no bindings in this stage")
            if st.alignment is not None:
                for kp in st.alignment:
                    if kp not in kps:
                        err(("stages", i, "alignment"), f"undeclared keypoint {kp}")
    return errors


def _same_pattern(pattern: UnsafePattern, name: str) -> bool:
    try:
        return UnsafePattern.parse(name) is pattern
    except ValueError:
        return False


def validate_data(data: dict, marks: dict | None = None, source: str | None = None) -> RunConfig:
    """Validate a raw mapping; raises :class:`ConfigError` listing every problem."""
    marks = marks or {}
    try:
        cfg = _ADAPTER.validate_python(data)
    except ValidationError as exc:
        errors = [f"{_where(tuple(str(p) for p in e['loc']), marks)}: {e['msg']}" for e in exc.errors()]
        raise ConfigError(errors, source) from None
    errors = _semantic_errors(cfg, marks)
    if errors:
        raise ConfigError(errors, source)
    return cfg


def load_config(path, overrides: list[str] = ()) -> RunConfig:
    path = os.fspath(path)
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError([f"cannot read config: {exc.strerror}"], path) from None
    data, marks = parse_yaml(text, path)
    if overrides:
        data = apply_overrides(data, list(overrides))
    return validate_data(data, marks, path)


def config_to_dict(cfg: RunConfig) -> dict:
    return _ADAPTER.dump_python(cfg, mode="json")


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)


def _schedule(s: ScheduleSection) -> NoiseSchedule:
    if s.kind == "cosine":
        return NoiseSchedule.cosine(s.steps, eta=s.eta)
    return NoiseSchedule.linear(s.steps, s.beta_start, s.beta_end, eta=s.eta)


def _guidance(g: GuidanceSection, rho0: float) -> GuidanceConfig:
    return GuidanceConfig(rho0=rho0 if g.rho0 is None else g.rho0, guided_steps=g.guided_steps,
                          grad_clip=g.grad_clip, rho_schedule=g.rho_schedule,
                          guide_grippers=tuple(g.guide_grippers))


def _detectors(d: DetectorSection) -> DetectorConfig:
    return DetectorConfig(d.d_align, d.d_tear, d.poke_tolerance, d.tip_radius)


def _frame(f: FrameSection) -> Pose:
    return Pose.from_xyz_rpy(f.xyz, f.rpy)


def _chain(c: ChainSection, name: str) -> SerialChain:
    joints = tuple(Joint(np.asarray(j.axis, float) / max(np.linalg.norm(j.axis), 1e-300),
                         Pose.from_xyz_rpy(j.xyz, j.rpy), j.limits) for j in c.joints)
    return SerialChain(joints, _frame(c.base), _frame(c.tip), name)


def to_episode_config(cfg: RunConfig, guidance_off: bool = False, label: str | None = None) -> EpisodeConfig:
    """Sim-level configuration for one variant of the run."""
    spec = SCENARIOS[cfg.scenario]
    arms = None
    if cfg.chains is not None:
        arms = ArmPair(_chain(cfg.chains.left, "left"), _chain(cfg.chains.right, "right"))
    stages = None
    if cfg.stages is not None:
        stages = tuple(StageDecl(s.id, s.name, s.until, tuple(s.expected), dict(s.bindings),
                                 tuple(s.alignment) if s.alignment else None) for s in cfg.stages)
    w = cfg.costs.weights
    sch = cfg.scheduler
    return EpisodeConfig(
        scenario=cfg.scenario,
        variant=label if label is not None else cfg.label,
        schedule=_schedule(cfg.schedule),
        guidance=_guidance(cfg.guidance, spec.rho0),
        guidance_enabled=cfg.guidance.enabled and not guidance_off,
        disabled_costs=tuple(cfg.guidance.disabled_costs),
        weights=(w.C1, w.C2, w.C3, w.C4, w.C5),
        h0=cfg.costs.h0,
        lam=cfg.costs.lam,
        policy=PolicyConfig(cfg.policy.horizon, cfg.policy.execute, cfg.policy.spread,
                            cfg.policy.gripper_spread, cfg.policy.mode),
        detectors=_detectors(cfg.detectors),
        keypoints=KeypointNoise(cfg.keypoints.noise_std,
                                tuple((d.id, d.start, d.end) for d in cfg.keypoints.dropout),
                                cfg.keypoints.beta, cfg.keypoints.smoothing),
        rules=RuleConfig(sch.approach_radius, sch.motion_eps, sch.converge_radius),
        scheduler=sch.mode,
        scheduler_url=sch.url,
        scheduler_timeout=sch.timeout,
        reinvoke=sch.reinvoke,
        stages=stages,
        arms=arms,
        horizon=cfg.horizon,
    )


def default_arms_section() -> dict[str, Any]:
    """The built-in chains as a ``chains`` config section (a starting point for edits)."""
    arms = default_arms()
    out = {}
    for arm in ("left", "right"):
        chain = arms.chain(arm)
        out[arm] = {
            "joints": [{"axis": j.axis.tolist(), "xyz": j.offset.translation.tolist(), "rpy": [0.0, 0.0, 0.0],
                        "limits": list(j.limits)} for j in chain.joints],
            "base": {"xyz": chain.base.translation.tolist(), "rpy": [0.0, 0.0, 0.0]},
            "tip": {"xyz": chain.tip.translation.tolist(), "rpy": [0.0, float(np.pi / 2), 0.0]},
        }
    return out
