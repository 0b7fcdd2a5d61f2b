"""Apple-handover and pour scheduling fixtures: stage plans, scenes and guidance documents."""
import numpy as np

from bimanual_safety.scheduler.rules import make_stage

from conftest import kp, make_obs, obj


def _arm(enable, point):
    return {"enable": enable, "point": point}


def _doc(key, left, right):
    return {key: {"enable": True, "enable_left_arm": _arm(*left), "enable_right_arm": _arm(*right)}}


# Apple handover. Keypoint -3 is the apple centre; -1/-2 are the gripper tips.
HANDOVER_STAGE1_LITERAL = _doc("enable_poking_guidance", (False, "-3"), (True, None))
HANDOVER_STAGE1 = _doc("enable_poking_guidance", (True, "-3"), (False, None))
HANDOVER_TEAR = _doc("enable_tear_guidance", (True, "-1"), (True, "-2"))
HANDOVER_GRIPPERS = _doc("enable_gripper_collision_guidance", (True, "-1"), (True, "-2"))

# Pour: 1 coke neck, 3 coke middle, 4 cup rim, 5 cup middle.
POUR_STAGE1 = _doc("enable_poking_guidance", (True, "3"), (True, "5"))
POUR_STAGE2 = _doc("enable_collision_guidance", (True, "1"), (True, "4"))
POUR_STAGE3 = _doc("enable_align_guidance", (True, "1"), (True, "4"))


def handover_plan():
    objects, kps = ["apple"], [-3]
    return [
        make_stage(1, "grasp apple", "gripper_closed(left) AND object_height(apple) > 0.85",
                   expected=["poking"], bindings={"poking": (-3, None)}, objects=objects, keypoints=kps),
        make_stage(2, "handover", None, bindings={"tearing": (-1, -2), "gripper_collision": (-1, -2)},
                   objects=objects, keypoints=kps),
    ]


def pour_plan():
    objects, kps = ["coke", "cup"], [1, 3, 4, 5]
    return [
        make_stage(1, "grasp coke and cup", "gripper_closed(left) and gripper_closed(right)",
                   expected=["poking"], bindings={"poking": (3, 5)}, objects=objects, keypoints=kps),
        make_stage(2, "align coke with cup", "abs(object_height(coke) - object_height(cup)) > 0.10",
                   expected=["object_collision"], bindings={"object_collision": (1, 4)},
                   objects=objects, keypoints=kps),
        make_stage(3, "pour coke", None, expected=["misalignment"], bindings={"misalignment": (1, 4)},
                   objects=objects, keypoints=kps, alignment=(1, 4)),
    ]


def apple_kp(center):
    return kp(-3, center, "apple", "apple_centre")


def handover_grasp_scene():
    """Left gripper open, 8 cm above the apple; right arm far away."""
    apple = (0.4, 0.0, 0.8)
    return make_obs(tips={"left": (0.4, 0.0, 0.88), "right": (0.4, -0.6, 1.0)},
                    objects=[obj("apple", apple)], keypoints=[apple_kp(apple)])


def handover_tear_scene():
    apple = (0.4, 0.0, 0.9)
    return make_obs(tips={"left": (0.4, 0.04, 0.9), "right": (0.4, -0.04, 0.9)},
                    closed={"left": True, "right": True},
                    objects=[obj("apple", apple, holders=("left", "right"))], keypoints=[apple_kp(apple)],
                    dual_grasp_width=0.08)


def handover_dropped_scene():
    """Left closed on nothing (apple fell to 0.75), tips closing in."""
    apple = (0.4, 0.0, 0.75)
    return make_obs(tips={"left": (0.4, 0.05, 0.9), "right": (0.4, -0.15, 0.9)},
                    prev_tips={"left": (0.4, 0.06, 0.9), "right": (0.4, -0.17, 0.9)},
                    closed={"left": True, "right": False},
                    objects=[obj("apple", apple)], keypoints=[apple_kp(apple)])


def _pour_kps(coke, cup):
    coke, cup = np.asarray(coke, float), np.asarray(cup, float)
    return [kp(1, coke + (0, 0, 0.08), "coke", "coke_neck"), kp(3, coke, "coke", "coke_mid"),
            kp(4, cup + (0, 0, 0.05), "cup", "cup_rim"), kp(5, cup, "cup", "cup_mid")]


def pour_grasp_scene():
    coke, cup = (0.4, 0.2, 0.8), (0.4, -0.2, 0.8)
    return make_obs(tips={"left": (0.4, 0.2, 0.9), "right": (0.4, -0.2, 0.9)},
                    objects=[obj("coke", coke), obj("cup", cup)], keypoints=_pour_kps(coke, cup))


def pour_move_scene():
    coke, cup = (0.4, 0.15, 0.95), (0.4, -0.15, 0.85)
    return make_obs(tips={"left": (0.4, 0.15, 0.95), "right": (0.4, -0.15, 0.85)},
                    closed={"left": True, "right": True},
                    objects=[obj("coke", coke, holders=("left",), prev=(0.4, 0.16, 0.94)),
                             obj("cup", cup, holders=("right",), prev=(0.4, -0.16, 0.84))],
                    keypoints=_pour_kps(coke, cup))


def pour_align_scene():
    coke, cup = (0.4, 0.05, 1.0), (0.4, -0.05, 0.85)
    return make_obs(tips={"left": (0.4, 0.05, 1.0), "right": (0.4, -0.05, 0.85)},
                    closed={"left": True, "right": True},
                    objects=[obj("coke", coke, holders=("left",)), obj("cup", cup, holders=("right",))],
                    keypoints=_pour_kps(coke, cup))


# (plan factory, stage index, scene factory, expected document)
CASES = {
    "handover_grasp": (handover_plan, 0, handover_grasp_scene, HANDOVER_STAGE1),
    "handover_tear": (handover_plan, 1, handover_tear_scene, HANDOVER_TEAR),
    "handover_dropped": (handover_plan, 1, handover_dropped_scene, HANDOVER_GRIPPERS),
    "pour_grasp": (pour_plan, 0, pour_grasp_scene, POUR_STAGE1),
    "pour_move": (pour_plan, 1, pour_move_scene, POUR_STAGE2),
    "pour_align": (pour_plan, 2, pour_align_scene, POUR_STAGE3),
}
