import json

import numpy as np
import pytest

from bimanual_safety.errors import ContractError
from bimanual_safety.geometry import Pose
from bimanual_safety.scheduler.patterns import UnsafePattern
from bimanual_safety.sim.detectors import DetectorConfig, UnsafeEvent, detect_unsafe
from bimanual_safety.sim.metrics import metrics, paired
from bimanual_safety.sim.runner import EpisodeConfig, EpisodeReport, KeypointNoise, run_batch, run_episode
from bimanual_safety.sim.scenarios import SCENARIOS, StageDecl, build_episode, default_arms, desk_arm_ik, get_scenario
from bimanual_safety.sim.scene import KeypointDecl, Scene, SceneObject

from conftest import kp, make_obs, obj

ARMS = default_arms()
DOWN_Q = {a: desk_arm_ik(ARMS.chain(a), p) for a, p in (("left", (0.35, 0.1, 0.1)), ("right", (0.35, -0.2, 0.1)))}


def simple_scene(ball_at=(0.35, 0.1, 0.1)):
    ball = SceneObject("ball", Pose.from_translation(ball_at), 0.03)
    return Scene(ARMS, DOWN_Q, {"left": 0.08, "right": 0.08}, [ball], [KeypointDecl(1, "ball", (0, 0, 0.02))])


def test_idle_action_only_advances_time():
    scene = simple_scene()
    before = scene.observe()
    scene.step(scene.state_row())
    after = scene.observe()
    assert after.t == before.t + 1
    for a in ("left", "right"):
        assert np.array_equal(after.tips[a], before.tips[a])
    assert np.array_equal(after.objects["ball"].center, before.objects["ball"].center)


def test_closing_grasps_and_carries():
    scene = simple_scene()
    row = scene.state_row()
    row[ARMS.gripper_column("left")] = 0.02
    scene.step(row)
    assert scene.holding("left") == "ball" and scene.holding("right") is None
    offset = scene.objects["ball"].grasp_offsets["left"]
    # 10-step lift and sideways carry
    for s in range(1, 11):
        q = desk_arm_ik(ARMS.chain("left"), (0.35 + 0.005 * s, 0.1, 0.1 + 0.01 * s))
        scene.step(ARMS.join(q, scene.q["right"], 0.02, 0.08))
    expect = scene.tip("left") @ offset
    assert scene.objects["ball"].pose.allclose(expect, 1e-12)
    assert scene.observe().closed["left"] and not scene.observe().closed["right"]
    # opening past the grasp width releases
    scene.step(ARMS.join(scene.q["left"], scene.q["right"], 0.08, 0.08))
    assert scene.holding("left") is None


def test_far_gripper_does_not_grasp():
    scene = simple_scene(ball_at=(0.35, 0.3, 0.1))
    row = scene.state_row()
    row[ARMS.gripper_column("left")] = 0.0
    scene.step(row)
    assert scene.holding("left") is None


def _pair(prev, cur):
    return [prev, cur]


def held(dist, dual=0.08):
    return make_obs(tips={"left": (0.4, dist / 2, 0.3), "right": (0.4, -dist / 2, 0.3)},
                    closed={"left": True, "right": True},
                    objects=[obj("apple", (0.4, 0, 0.3), holders=("left", "right"))], dual_grasp_width=dual)


def test_tearing_threshold():
    cfg = DetectorConfig()
    fired = detect_unsafe([held(0.08), held(0.13)], cfg)
    assert [e.kind for e in fired] == [UnsafePattern.GripperTearing] and fired[0].value == pytest.approx(0.05)
    assert detect_unsafe([held(0.08), held(0.08 + 0.9 * 0.04)], cfg) == []


def aligned(dx):
    kps = [kp(1, (0.4 + dx, 0, 0.4), "bottle"), kp(2, (0.4, 0, 0.25), "cup")]
    objects = [obj("bottle", (0.4 + dx, 0, 0.35), 0.03, ("left",)), obj("cup", (0.4, 0, 0.2), 0.04, ("right",))]
    return make_obs(tips={"left": (0.4, 0.3, 0.5), "right": (0.4, -0.3, 0.5)}, closed={"left": True, "right": True},
                    objects=objects, keypoints=kps)


def test_alignment_threshold():
    fired = detect_unsafe([aligned(0.031), aligned(0.031)], DetectorConfig(), alignment=(1, 2))
    assert [e.kind for e in fired] == [UnsafePattern.BehaviorMisalignment]
    assert detect_unsafe([aligned(0.027), aligned(0.027)], DetectorConfig(), alignment=(1, 2)) == []
    assert detect_unsafe([aligned(0.1), aligned(0.1)], DetectorConfig()) == []


def test_sphere_and_tip_collisions():
    apart = make_obs(objects=[obj("a", (0.4, 0.06, 0.1), 0.05), obj("b", (0.4, -0.06, 0.1), 0.05)])
    assert detect_unsafe([apart, apart]) == []
    near = make_obs(objects=[obj("a", (0.4, 0.045, 0.1), 0.05), obj("b", (0.4, -0.045, 0.1), 0.05)])
    assert [e.kind for e in detect_unsafe([apart, near])] == [UnsafePattern.ObjectObjectCollision]
    # tips pass through each other within one step: the swept check still fires
    a = make_obs(tips={"left": (0.4, 0.1, 0.3), "right": (0.4, -0.1, 0.3)})
    b = make_obs(tips={"left": (0.4, -0.1, 0.3), "right": (0.4, 0.1, 0.3)})
    assert [e.kind for e in detect_unsafe([a, b])] == [UnsafePattern.GripperGripperCollision]


def test_poking_needs_offset_open_gripper_and_approach():
    ball = obj("ball", (0.4, 0, 0.1), 0.04)
    top = kp(1, (0.4, 0, 0.14), "ball")

    def at(x, z, closed=False):
        return make_obs(tips={"left": (x, 0, z), "right": (0.4, -0.4, 0.3)}, objects=[ball], keypoints=[top],
                        closed={"left": closed, "right": False})

    assert [e.kind for e in detect_unsafe([at(0.43, 0.16), at(0.43, 0.12)])] == [UnsafePattern.GripperPoking]
    assert detect_unsafe([at(0.41, 0.16), at(0.41, 0.12)]) == []  # within tolerance
    assert detect_unsafe([at(0.43, 0.12), at(0.43, 0.16)]) == []  # retreating
    assert detect_unsafe([at(0.43, 0.16, True), at(0.43, 0.12, True)]) == []  # closed gripper


def test_detector_contracts():
    with pytest.raises(ContractError):
        DetectorConfig(d_tear=0)
    with pytest.raises(ContractError):
        detect_unsafe([held(0.08)])
    e = UnsafeEvent(UnsafePattern.GripperTearing, 3, 0.05, 0.04, detail="apple")
    assert UnsafeEvent.from_dict(json.loads(json.dumps(e.to_dict()))) == e


def _report(success, events, seed=0, variant="guided"):
    ev = [UnsafeEvent(UnsafePattern.GripperPoking, 1, 0.1, 0.02)] * events
    return EpisodeReport("x", variant, seed, 0, success, success, 10, ev)


def test_metrics_examples():
    reports = [_report(i < 46, 1 if 46 <= i < 55 else 0) for i in range(100)]
    m = metrics(reports)
    assert (m.sr, m.dr) == (0.46, 0.09) and m.safe_failure == pytest.approx(0.45)
    assert m.per_kind["poking"] == 0.09 and m.event_counts["poking"] == 9
    m = metrics([_report(True, 0)] * 5)
    assert (m.sr, m.dr) == (1.0, 0.0)
    m = metrics([_report(False, 2)])
    assert (m.sr, m.dr) == (0.0, 1.0)
    with pytest.raises(ContractError):
        metrics([])
    cmp = paired([_report(False, 1, s, "baseline") for s in range(4)],
                 [_report(True, 0, s) for s in range(3)] + [_report(False, 1, 3)])
    assert cmp.pairs == 4 and cmp.strictly_safer == 0.75 and cmp.delta_dr == -0.75


def test_scenarios_build():
    for name, spec in SCENARIOS.items():
        ep = build_episode(spec, np.random.default_rng(0))
        assert ep.demo.shape[1] == ARMS.action_dim and ep.horizon > len(ep.demo)
    with pytest.raises(ValueError):
        get_scenario("juggling")


def test_episode_is_deterministic():
    cfg = EpisodeConfig("handover", keypoints=KeypointNoise(noise_std=0.002))
    a, b = [], []
    ra = run_episode(cfg, 7, 0, a.append)
    rb = run_episode(cfg, 7, 0, b.append)
    assert json.dumps(ra.to_dict()) == json.dumps(rb.to_dict())
    assert json.dumps(a) == json.dumps(b)
    steps = [r for r in a if r["type"] == "step"]
    assert [r["t"] for r in steps] == list(range(1, len(steps) + 1))
    assert a[-1]["type"] == "episode"


def test_goal_and_horizon():
    ok = run_episode(EpisodeConfig("handover"), 1)
    assert ok.success and ok.goal_met and not ok.events and ok.steps < 200
    short = run_episode(EpisodeConfig("handover", horizon=5), 1)
    assert not short.success and short.steps == 5 and short.failure is None


def test_module_error_becomes_failure_report():
    stages = (StageDecl(1, "broken", None, ("tearing",), {"tearing": (-1, -2)}),)
    report = run_episode(EpisodeConfig("dual_pick", stages=stages), 0)
    assert not report.success and report.failure and "C4" in report.failure


def test_run_batch_orders_by_index():
    reports = run_batch(EpisodeConfig("stack", guidance_enabled=False), 3, 2)
    assert [r.episode for r in reports] == [0, 1] and all(r.variant == "baseline" for r in reports)
