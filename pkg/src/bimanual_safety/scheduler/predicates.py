"""Termination-predicate expressions over a scene snapshot.

Expressions use Python syntax restricted to boolean connectives, comparisons,
``+``/``-``, ``abs`` and these scene functions::

    gripper_closed(arm)   grasped(arm, object)   object_height(object)
    tip_height(arm)       distance(a, b)

``a``/``b`` are object ids, keypoint ids, or ``left_tip``/``right_tip``.
Upper-case ``AND``/``OR``/``NOT`` are accepted.
"""
from __future__ import annotations

import ast
import re
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from ..errors import PlanValidationError
from ..observation import Observation

ARMS = ("left", "right")
TIP_NAMES = ("left_tip", "right_tip")

_ARG_KINDS = {
    "gripper_closed": ("arm",),
    "grasped": ("arm", "object"),
    "object_height": ("object",),
    "tip_height": ("arm",),
    "distance": ("point", "point"),
    "abs": ("number",),
}


@dataclass
class Predicate:
    source: str
    tree: ast.Expression = field(repr=False)

    def __call__(self, obs: Observation) -> bool:
        return bool(_eval(self.tree.body, obs))


def _normalize(source: str) -> str:
    return re.sub(r"\b(AND|OR|NOT)\b", lambda m: m.group(1).lower(), source)


def _literal(node):
    if isinstance(node, ast.Name):
        return node.id
    if isinstance(node, ast.Constant):
        return node.value
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.USub) and isinstance(node.operand, ast.Constant):
        return -node.operand.value
    raise PlanValidationError(f"unsupported argument {ast.dump(node)}")


def _check_ref(kind: str, value, objects: set[str], keypoints: set[int], where: str):
    if kind == "arm":
        if value not in ARMS:
            raise PlanValidationError(f"{where}: unknown arm {value!r}")
    elif kind == "object":
        if str(value) not in objects:
            raise PlanValidationError(f"{where}: unknown object {value!r}")
    elif kind == "point":
        if value in TIP_NAMES or str(value) in objects:
            return
        try:
            kp = int(value)
        except (TypeError, ValueError):
            raise PlanValidationError(f"{where}: unknown point {value!r}") from None
        if kp not in keypoints and kp not in (-1, -2):
            raise PlanValidationError(f"{where}: unknown keypoint {value!r}")


def _validate(node, objects, keypoints, where):
    if isinstance(node, ast.BoolOp) or (isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.Not)):
        for child in getattr(node, "values", None) or [node.operand]:
            _validate(child, objects, keypoints, where)
    elif isinstance(node, ast.Compare):
        for child in [node.left, *node.comparators]:
            _validate(child, objects, keypoints, where)
    elif isinstance(node, ast.BinOp) and isinstance(node.op, (ast.Add, ast.Sub)):
        _validate(node.left, objects, keypoints, where)
        _validate(node.right, objects, keypoints, where)
    elif isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.USub):
        _validate(node.operand, objects, keypoints, where)
    elif isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _ARG_KINDS:
            raise PlanValidationError(f"{where}: unknown function in {ast.unparse(node)!r}")
        kinds = _ARG_KINDS[node.func.id]
        if len(node.args) != len(kinds) or node.keywords:
            raise PlanValidationError(f"{where}: {node.func.id} takes {len(kinds)} argument(s)")
        for kind, arg in zip(kinds, node.args):
            if kind == "number":
                _validate(arg, objects, keypoints, where)
            else:
                _check_ref(kind, _literal(arg), objects, keypoints, where)
    elif isinstance(node, ast.Constant) and isinstance(node.value, (int, float, bool)):
        pass
    elif isinstance(node, ast.Name) and node.id in ("true", "false", "True", "False"):
        pass
    else:
        raise PlanValidationError(f"{where}: unsupported expression {ast.unparse(node)!r}")


def parse_predicate(
    source: str,
    objects: Iterable[str] = (),
    keypoints: Iterable[int] = (),
    where: str = "predicate",
) -> Predicate:
    """Parse and validate ``source`` against the declared scene entities."""
    try:
        tree = ast.parse(_normalize(source), mode="eval")
    except SyntaxError as exc:
        raise PlanValidationError(f"{where}: cannot parse {source!r}: {exc.msg}") from None
    _validate(tree.body, set(map(str, objects)), set(int(k) for k in keypoints), where)
    return Predicate(source, tree)


def _eval(node, obs: Observation):
    if isinstance(node, ast.BoolOp):
        if isinstance(node.op, ast.And):
            return all(_eval(v, obs) for v in node.values)
        return any(_eval(v, obs) for v in node.values)
    if isinstance(node, ast.UnaryOp):
        if isinstance(node.op, ast.Not):
            return not _eval(node.operand, obs)
        return -_eval(node.operand, obs)
    if isinstance(node, ast.BinOp):
        left, right = _eval(node.left, obs), _eval(node.right, obs)
        return left + right if isinstance(node.op, ast.Add) else left - right
    if isinstance(node, ast.Compare):
        left = _eval(node.left, obs)
        for op, comp in zip(node.ops, node.comparators):
            right = _eval(comp, obs)
            if not _compare(op, left, right):
                return False
            left = right
        return True
    if isinstance(node, ast.Constant):
        return node.value
    if isinstance(node, ast.Name):
        return node.id in ("true", "True")
    if isinstance(node, ast.Call):
        name = node.func.id
        if name == "abs":
            return abs(_eval(node.args[0], obs))
        args = [_literal(a) for a in node.args]
        if name == "gripper_closed":
            return obs.closed[args[0]]
        if name == "grasped":
            return args[0] in obs.objects[str(args[1])].holders
        if name == "object_height":
            return float(obs.objects[str(args[0])].center[2])
        if name == "tip_height":
            return float(obs.tips[args[0]][2])
        if name == "distance":
            a, b = (obs.point(_point_ref(x)) for x in args)
            return float(np.linalg.norm(a - b))
    raise PlanValidationError(f"cannot evaluate {ast.unparse(node)!r}")


def _point_ref(value):
    if isinstance(value, (int, np.integer)):
        return int(value)
    return value


def _compare(op, a, b) -> bool:
    if isinstance(op, ast.Gt):
        return a > b
    if isinstance(op, ast.GtE):
        return a >= b
    if isinstance(op, ast.Lt):
        return a < b
    if isinstance(op, ast.LtE):
        return a <= b
    if isinstance(op, ast.Eq):
        return a == b
    if isinstance(op, ast.NotEq):
        return a != b
    raise PlanValidationError(f"unsupported comparison {type(op).__name__}")
