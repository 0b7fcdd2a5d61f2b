import json

import numpy as np
import pytest

from bimanual_safety.errors import PlanValidationError, SchedulingContractError, SchemaError
from bimanual_safety.scheduler.patterns import ArmPoints, CostMask, UnsafePattern
from bimanual_safety.scheduler.predicates import parse_predicate
from bimanual_safety.scheduler.remote import (
    MockSchedulerServer, RemoteScheduler, encode_document, guidance_document, parse_guidance, request_document,
)
from bimanual_safety.scheduler.rules import (
    StageTracker, advance_stage, identify_pattern_rules, make_stage, rule_schedule, schedule_costs,
)

import guidance_examples as ex
from conftest import make_obs, obj

CASE_IDS = sorted(ex.CASES)


@pytest.mark.parametrize("name", CASE_IDS)
def test_rule_engine_reproduces_documents(name):
    plan, index, scene, doc = ex.CASES[name]
    stage = plan()[index]
    obs = scene()
    mask = rule_schedule(stage, obs)
    assert guidance_document(mask) == doc
    assert encode_document(guidance_document(mask)) == encode_document(doc)
    assert mask == parse_guidance(doc, obs.keypoints)


def test_documented_masks():
    mask = rule_schedule(ex.handover_plan()[1], ex.handover_tear_scene())
    assert mask.alpha == (False, False, False, True, False) and mask.points[4] == ArmPoints(-1, -2)
    mask = rule_schedule(ex.pour_plan()[2], ex.pour_align_scene())
    assert mask.alpha == (False, True, False, False, False) and mask.points[2] == ArmPoints(1, 4)
    idle = make_stage(9, "idle")
    assert schedule_costs(identify_pattern_rules(idle, ex.pour_grasp_scene()), idle) == CostMask.empty()


def test_schedule_costs_is_pure():
    stage = ex.pour_plan()[1]
    a = schedule_costs(UnsafePattern.ObjectObjectCollision, stage)
    b = schedule_costs(UnsafePattern.ObjectObjectCollision, stage)
    assert a == b
    with pytest.raises(SchedulingContractError):
        schedule_costs(UnsafePattern.BehaviorMisalignment, stage)


def test_rule_priorities_respect_declared_bindings():
    # a tearing configuration in a stage that only declares poking falls back to expected
    stage = ex.handover_plan()[0]
    obs = ex.handover_tear_scene()
    assert identify_pattern_rules(stage, obs) is UnsafePattern.GripperPoking  # expected fallback
    # objects not moving -> no collision rule; expected pattern used
    still = make_obs(closed={"left": True, "right": True},
                     objects=[obj("coke", (0, 0.1, 1), holders=("left",)), obj("cup", (0, -0.1, 1), holders=("right",))])
    assert identify_pattern_rules(ex.pour_plan()[1], still) is UnsafePattern.ObjectObjectCollision


def test_predicate_from_handover_example():
    pred = parse_predicate("gripper_closed(left) AND object_height(apple) > 0.85", ["apple"])
    up = make_obs(closed={"left": True, "right": False}, objects=[obj("apple", (0, 0, 0.9))])
    down = make_obs(closed={"left": True, "right": False}, objects=[obj("apple", (0, 0, 0.8))])
    assert pred(up) and not pred(down)
    with pytest.raises(PlanValidationError):
        parse_predicate("object_height(banana) > 1", ["apple"])
    with pytest.raises(PlanValidationError):
        parse_predicate("distance(7, left_tip) < 1", ["apple"], [1, 2])
    with pytest.raises(PlanValidationError):
        make_stage(1, "x", bindings={"poking": (9, None)}, keypoints=[1])


def test_tracker_latches():
    plan = ex.pour_plan()
    closed = make_obs(closed={"left": True, "right": True},
                      objects=[obj("coke", (0, 0.1, 1)), obj("cup", (0, -0.1, 1))])
    opened = make_obs(objects=[obj("coke", (0, 0.1, 1)), obj("cup", (0, -0.1, 1))])
    tracker = StageTracker(plan)
    for o in (opened, closed, opened, closed, opened):
        tracker.advance(o)
    assert tracker.current.id == 2 and len(tracker.transitions) == 1
    last = StageTracker(plan[2:])
    assert last.advance(closed).id == 3 and last.is_final
    assert advance_stage(plan, 0, closed) == 1 and advance_stage(plan, 0, opened) == 0


def test_parse_guidance_rejections():
    known = [1, 3, 4, 5]
    good = ex.POUR_STAGE2
    assert parse_guidance({"llm_output": good}, known) == parse_guidance(good, known)
    assert parse_guidance(json.dumps(good), known) == parse_guidance(good, known)
    bad = [
        b"not json",
        {"enable_banana_guidance": good["enable_collision_guidance"]},
        {"enable_collision_guidance": {**good["enable_collision_guidance"], "enable": "yes"}},
        {"enable_collision_guidance": {**good["enable_collision_guidance"], "extra": 1}},
        ex.HANDOVER_STAGE1_LITERAL,
        {"enable_collision_guidance": {"enable": True, "enable_left_arm": {"enable": True, "point": "99"},
                                       "enable_right_arm": {"enable": True, "point": "4"}}},
        {"enable_collision_guidance": {"enable": True, "enable_left_arm": {"enable": True, "point": "1"},
                                       "enable_right_arm": {"enable": False, "point": None}}},
    ]
    for doc in bad:
        with pytest.raises(SchemaError):
            parse_guidance(doc, known + [-3])


def test_remote_round_trip_and_request_shape():
    obs = ex.pour_move_scene()
    stage = ex.pour_plan()[1]
    with MockSchedulerServer(encode_document(ex.POUR_STAGE2)) as server:
        client = RemoteScheduler(server.url, timeout=2.0)
        mask = client.schedule(stage, obs)
    assert client.fallbacks == 0
    assert client.responses == [encode_document(ex.POUR_STAGE2)]
    assert mask == rule_schedule(stage, obs)
    sent = server.requests[0]
    assert sent == json.loads(json.dumps(request_document(stage, obs)))
    assert [k["id"] for k in sent["keypoints"]] == [-1, -2, 1, 3, 4, 5]


def test_remote_literal_handover_document_selects_poking_or_falls_back():
    obs, stage = ex.handover_grasp_scene(), ex.handover_plan()[0]
    with MockSchedulerServer(ex.HANDOVER_STAGE1) as server:
        client = RemoteScheduler(server.url)
        mask = client.schedule(stage, obs)
    assert mask.alpha == (False, False, True, False, False) and mask.points[3] == ArmPoints(-3, None)
    with MockSchedulerServer(ex.HANDOVER_STAGE1_LITERAL) as server:
        client = RemoteScheduler(server.url)
        assert client.schedule(stage, obs) == rule_schedule(stage, obs)
    assert client.fallbacks == 1


def test_remote_fallbacks():
    obs, stage = ex.pour_move_scene(), ex.pour_plan()[1]
    rules = rule_schedule(stage, obs)
    bad_point = {"enable_collision_guidance": {"enable": True, "enable_left_arm": {"enable": True, "point": "99"},
                                               "enable_right_arm": {"enable": True, "point": "4"}}}
    with MockSchedulerServer(bad_point) as server:
        client = RemoteScheduler(server.url)
        assert client.schedule(stage, obs) == rules and client.fallbacks == 1
    with MockSchedulerServer(ex.POUR_STAGE2, delay=0.5) as server:
        client = RemoteScheduler(server.url, timeout=0.05)
        assert client.schedule(stage, obs) == rules
        assert client.fallbacks == 1 and "stage=2" in client.fallback_reasons[0]
    client = RemoteScheduler("http://127.0.0.1:9/schedule", timeout=0.2)
    assert client.schedule(stage, obs) == rules and client.fallbacks == 1


def test_remote_needs_url(monkeypatch):
    monkeypatch.delenv("BIMANUAL_SCHEDULER_URL", raising=False)
    with pytest.raises(ValueError):
        RemoteScheduler()
    monkeypatch.setenv("BIMANUAL_SCHEDULER_URL", "http://127.0.0.1:1/x")
    monkeypatch.setenv("BIMANUAL_SCHEDULER_TIMEOUT", "0.5")
    client = RemoteScheduler()
    assert client.url.endswith("/x") and client.timeout == 0.5


def test_cost_mask_contract():
    with pytest.raises(SchedulingContractError):
        CostMask((True, False, False, False, False), {1: ArmPoints(1, None)})
    mask = CostMask((True, False, True, False, False), {1: ArmPoints(1, 2), 3: ArmPoints(3, None)})
    assert mask.without([1]).active == [3] and mask.as_list() == [1, 0, 1, 0, 0]
    assert np.array_equal(mask.without([1, 3]).as_list(), [0] * 5)
