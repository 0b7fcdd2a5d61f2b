"""JSON-over-HTTP scheduler protocol, its client with rule fallback, and a mock server.

Request body::

    {"stage": {"id": 1, "name": "grasp apple"},
     "keypoints": [{"id": -1, "label": "left_gripper_tip", "xyz": [x, y, z]}, ...],
     "flags": {"t": 0, "left_gripper_closed": false, ...}}

The response is a guidance document, optionally wrapped as ``{"llm_output": ...}``::

    {"enable_tear_guidance": {"enable": true,
                              "enable_left_arm": {"enable": true, "point": "-1"},
                              "enable_right_arm": {"enable": true, "point": "-2"}}}
"""
from __future__ import annotations

import json
import logging
import os
import threading
import time
import urllib.error
import urllib.request
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable, Iterable, Mapping

from ..errors import SchedulingContractError, SchemaError
from ..observation import Observation
from .patterns import GUIDANCE_KEYS, ArmPoints, CostMask, UnsafePattern
from .rules import RuleConfig, StageSpec, rule_schedule

log = logging.getLogger(__name__)

URL_ENV = "BIMANUAL_SCHEDULER_URL"
TIMEOUT_ENV = "BIMANUAL_SCHEDULER_TIMEOUT"

_BY_KEY = {key: pattern for pattern, key in GUIDANCE_KEYS.items()}
_ARM_KEYS = (("left", "enable_left_arm"), ("right", "enable_right_arm"))


def guidance_document(mask: CostMask) -> dict:
    """Guidance document for ``mask``; blocks appear in cost-index order."""
    doc = {}
    for index in mask.active:
        pattern = UnsafePattern(index)
        pts = mask.points[index]
        block: dict[str, Any] = {"enable": True}
        for arm, key in _ARM_KEYS:
            kp = getattr(pts, arm)
            block[key] = {"enable": kp is not None, "point": None if kp is None else str(kp)}
        doc[pattern.guidance_key] = block
    return doc


def encode_document(doc: Mapping) -> bytes:
    return json.dumps(doc).encode("utf-8")


def _point(value, known: set[int], where: str) -> int:
    if isinstance(value, bool) or value is None:
        raise SchemaError(f"{where}: enabled arm needs a point id")
    try:
        kp = int(str(value).strip())
    except ValueError:
        raise SchemaError(f"{where}: point {value!r} is not an integer id") from None
    if kp not in known and kp not in (-1, -2):
        raise SchemaError(f"{where}: unknown point id {kp}")
    return kp


def parse_guidance(doc: Any, known_points: Iterable[int]) -> CostMask:
    """Validate a guidance document and convert it into a :class:`CostMask`."""
    if isinstance(doc, (bytes, str)):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"response is not JSON: {exc}") from None
    if isinstance(doc, dict) and set(doc) == {"llm_output"}:
        doc = doc["llm_output"]
    if not isinstance(doc, dict):
        raise SchemaError("guidance document must be a JSON object")
    known = set(int(k) for k in known_points)
    alpha = [False] * 5
    points: dict[int, ArmPoints] = {}
    for key, block in doc.items():
        pattern = _BY_KEY.get(key)
        if pattern is None:
            raise SchemaError(f"unknown guidance block {key!r}")
        if not isinstance(block, dict) or not isinstance(block.get("enable"), bool):
            raise SchemaError(f"{key}: block needs a boolean 'enable'")
        arms: dict[str, int | None] = {}
        for arm, arm_key in _ARM_KEYS:
            entry = block.get(arm_key)
            if not isinstance(entry, dict) or not isinstance(entry.get("enable"), bool) or "point" not in entry:
                raise SchemaError(f"{key}.{arm_key}: needs 'enable' (bool) and 'point'")
            arms[arm] = _point(entry["point"], known, f"{key}.{arm_key}") if entry["enable"] else None
        unexpected = set(block) - {"enable", "enable_left_arm", "enable_right_arm"}
        if unexpected:
            raise SchemaError(f"{key}: unexpected fields {sorted(unexpected)}")
        if not block["enable"]:
            continue
        alpha[pattern.cost_index - 1] = True
        points[pattern.cost_index] = ArmPoints(arms["left"], arms["right"])
    try:
        return CostMask(tuple(alpha), points)
    except SchedulingContractError as exc:
        raise SchemaError(str(exc)) from None


def request_document(stage: StageSpec, obs: Observation) -> dict:
    keypoints = [
        {"id": -1, "label": "left_gripper_tip", "xyz": [round(float(v), 6) for v in obs.tips["left"]]},
        {"id": -2, "label": "right_gripper_tip", "xyz": [round(float(v), 6) for v in obs.tips["right"]]},
    ]
    for kp in sorted(obs.keypoints.values(), key=lambda k: k.id):
        keypoints.append({"id": kp.id, "label": kp.label, "xyz": [round(float(v), 6) for v in kp.xyz]})
    flags = {
        "t": obs.t,
        "left_gripper_closed": bool(obs.closed["left"]),
        "right_gripper_closed": bool(obs.closed["right"]),
        "left_holding": obs.holding("left"),
        "right_holding": obs.holding("right"),
        "tip_distance": round(obs.tip_distance(), 6),
    }
    return {"stage": {"id": stage.id, "name": stage.name}, "keypoints": keypoints, "flags": flags}


class RemoteScheduler:
    """Blocking client; any transport, parse or validation failure falls back to the rules."""

    def __init__(self, url: str | None = None, timeout: float | None = None, rules: RuleConfig = RuleConfig()):
        self.url = url or os.environ.get(URL_ENV)
        if not self.url:
            raise ValueError(f"remote scheduler needs a URL (argument or ${URL_ENV})")
        self.timeout = float(timeout if timeout is not None else os.environ.get(TIMEOUT_ENV, 2.0))
        self.rules = rules
        self.fallbacks = 0
        self.fallback_reasons: list[str] = []
        self.responses: list[bytes] = []

    def _post(self, body: dict) -> bytes:
        req = urllib.request.Request(
            self.url, data=encode_document(body), headers={"Content-Type": "application/json"}, method="POST"
        )
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            return resp.read()

    def schedule(self, stage: StageSpec, obs: Observation) -> CostMask:
        known = list(obs.keypoints)
        try:
            raw = self._post(request_document(stage, obs))
            self.responses.append(raw)
            return parse_guidance(raw, known)
        except (OSError, urllib.error.URLError, TimeoutError, SchemaError) as exc:
            self.fallbacks += 1
            reason = f"t={obs.t} stage={stage.id}: {type(exc).__name__}: {exc}"
            self.fallback_reasons.append(reason)
            log.warning("remote scheduler fallback (%s)", reason)
            return rule_schedule(stage, obs, self.rules)


def remote_schedule(obs: Observation, stage: StageSpec, client: RemoteScheduler) -> CostMask:
    return client.schedule(stage, obs)


Responder = Callable[[dict], Any]


class MockSchedulerServer:
    """Local HTTP server answering scheduler requests.

    ``responses`` is a fixed document, a list replayed in order (the last entry
    repeats), or a callable ``request -> document``. Documents may be dicts,
    ``str`` or ``bytes``; bytes are sent verbatim. ``delay`` seconds are slept
    before each reply.
    """

    def __init__(self, responses: Any, delay: float = 0.0):
        self.responses = responses
        self.delay = delay
        self.requests: list[dict] = []
        self._served = 0
        self._lock = threading.Lock()
        self._server: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None

    def _reply(self, request: dict) -> bytes:
        with self._lock:
            self.requests.append(request)
            i = self._served
            self._served += 1
        if callable(self.responses):
            doc = self.responses(request)
        elif isinstance(self.responses, list):
            doc = self.responses[min(i, len(self.responses) - 1)]
        else:
            doc = self.responses
        if isinstance(doc, bytes):
            return doc
        if isinstance(doc, str):
            return doc.encode("utf-8")
        return encode_document(doc)

    def start(self) -> MockSchedulerServer:
        mock = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                try:
                    request = json.loads(self.rfile.read(length) or b"{}")
                except json.JSONDecodeError:
                    request = {}
                body = mock._reply(request)
                if mock.delay:
                    time.sleep(mock.delay)
                try:
                    self.send_response(200)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(body)))
                    self.end_headers()
                    self.wfile.write(body)
                except OSError:
                    pass

            def log_message(self, *args):
                pass

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._server.daemon_threads = True
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/schedule"

    def stop(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None

    def __enter__(self) -> MockSchedulerServer:
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
