"""Gateway to a model served by a child process.

The child speaks newline-delimited JSON on its standard streams. Its first
line is a handshake::

    {"protocol": "sealread-model/1", "ops": ["detect", "classify"],
     "classes": [...], "trained_on": [...]}

``classes`` is required when the child classifies and must equal the active
subset exactly when one is set; ``trained_on`` (optional) lists the seal ids its weights saw,
which the harness checks against the test fold. Requests and responses::

    {"op": "detect", "id": "3", "image": "<base64 PNG>"}
    {"id": "3", "detections": [{"cx": .., "cy": .., "w": .., "h": .., "conf": ..}]}

    {"op": "classify", "id": "4", "image": "<base64 PNG>"}
    {"id": "4", "scores": {"ALPHA": 0.9, ...}}

A response may carry {"id": .., "error": "..."} instead. Any error, timeout
or malformed line kills the child; the next request starts a fresh one.
"""

from __future__ import annotations

import base64
import json
import logging
import math
import queue
import shlex
import subprocess
import threading
from typing import Any, Sequence

import numpy as np

from ..corpus import encode_png
from .types import SCORE_TOLERANCE, ClassScores, Detection, InferenceError

PROTOCOL = "sealread-model/1"
RENORMALIZE_TOLERANCE = 1e-3

log = logging.getLogger(__name__)


def encode_image(image: np.ndarray) -> str:
    return base64.b64encode(encode_png(image)).decode("ascii")


def parse_scores(doc: Any, classes: Sequence[str]) -> ClassScores:
    """Scores keyed by class name; must cover exactly ``classes``.

    Sums within 1e-6 of one are kept verbatim; sums within 1e-3 are
    renormalised (float32 softmax output); anything else is rejected.
    """
    if not isinstance(doc, dict):
        raise InferenceError("scores must be an object")
    if set(doc) != set(classes):
        missing = sorted(set(classes) - set(doc))
        extra = sorted(set(doc) - set(classes))
        raise InferenceError(f"score keys do not match the class subset (missing {missing}, extra {extra})")
    try:
        raw = [float(doc[c]) for c in classes]
    except (TypeError, ValueError) as exc:
        raise InferenceError(f"non-numeric score: {exc}") from None
    if any(v < 0 or not math.isfinite(v) for v in raw):
        raise InferenceError("scores must be finite and nonnegative")
    total = math.fsum(raw)
    if abs(total - 1.0) <= SCORE_TOLERANCE:
        return ClassScores(tuple(classes), tuple(raw))
    if abs(total - 1.0) <= RENORMALIZE_TOLERANCE:
        return ClassScores.normalized(classes, raw)
    raise InferenceError(f"scores sum to {total}, not 1")


def parse_detections(doc: Any) -> list[Detection]:
    if not isinstance(doc, list):
        raise InferenceError("detections must be a list")
    out = []
    for i, d in enumerate(doc):
        try:
            out.append(Detection.from_dict(d))
        except (KeyError, TypeError, ValueError) as exc:
            raise InferenceError(f"detection {i} invalid: {exc}") from None
    return out


class ExternalModel:
    """One child process; requests are serialised through a lock."""

    def __init__(
        self,
        command: str | Sequence[str],
        timeout: float = 30.0,
        classes: Sequence[str] | None = None,
        require_ops: Sequence[str] = (),
        startup_timeout: float = 60.0,
    ):
        self.argv = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.argv:
            raise ValueError("empty external model command")
        self.timeout = timeout
        self.startup_timeout = max(startup_timeout, timeout)  # loading weights can be slow
        self.classes = tuple(classes) if classes is not None else None
        self.require_ops = tuple(require_ops)
        self.handshake: dict | None = None
        self._proc: subprocess.Popen | None = None
        self._lines: queue.Queue | None = None
        self._lock = threading.Lock()
        self._next_id = 0
        self.restarts = 0
        self._started = False

    # -- process management

    def _reader(self, stream, q: queue.Queue) -> None:
        for line in stream:
            q.put(line)
        q.put(None)

    def _start(self) -> None:
        try:
            self._proc = subprocess.Popen(
                self.argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        except OSError as exc:
            self._proc = None
            raise InferenceError(f"cannot start external model {self.argv[0]!r}: {exc}") from None
        self._lines = queue.Queue()
        threading.Thread(target=self._reader, args=(self._proc.stdout, self._lines), daemon=True).start()
        hs = self._read_message(self.startup_timeout)
        if hs.get("protocol") != PROTOCOL:
            self._fail(f"protocol {hs.get('protocol')!r}, expected {PROTOCOL!r}")
        ops = hs.get("ops", [])
        missing = [op for op in self.require_ops if op not in ops]
        if missing:
            self._fail(f"model does not offer {missing}")
        if "classify" in self.require_ops:
            declared = hs.get("classes")
            if not isinstance(declared, list) or not declared:
                self._fail("classifier handshake lacks its class list")
            if self.classes is None:
                self.classes = tuple(declared)
            elif tuple(declared) != self.classes:
                self._fail(f"model classes {declared} differ from the active subset {list(self.classes)}")
        self.handshake = hs

    def _fail(self, msg: str):
        self.close()
        raise InferenceError(msg)

    def _read_message(self, timeout: float | None = None) -> dict:
        assert self._lines is not None
        timeout = self.timeout if timeout is None else timeout
        try:
            line = self._lines.get(timeout=timeout)
        except queue.Empty:
            self._fail(f"no answer within {timeout} s")
        if line is None:
            self._fail("external model exited")
        try:
            msg = json.loads(line)
        except json.JSONDecodeError:
            self._fail(f"malformed message: {line[:80]!r}")
        if not isinstance(msg, dict):
            self._fail("message is not an object")
        return msg

    def ensure_started(self) -> dict:
        with self._lock:
            if self._proc is None or self._proc.poll() is not None:
                if self._proc is not None:
                    self.close()
                if self._started:
                    self.restarts += 1
                self._started = True
                self._start()
            return self.handshake

    def close(self) -> None:
        proc, self._proc = self._proc, None
        if proc is None:
            return
        try:
            proc.stdin.close()
        except OSError:
            pass
        try:
            proc.wait(timeout=1.0)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- requests

    def request(self, op: str, image: np.ndarray) -> dict:
        self.ensure_started()
        with self._lock:
            self._next_id += 1
            rid = str(self._next_id)
            msg = json.dumps({"op": op, "id": rid, "image": encode_image(image)})
            try:
                self._proc.stdin.write(msg + "\n")
                self._proc.stdin.flush()
            except (OSError, AttributeError):
                self._fail("external model closed its input")
            resp = self._read_message()
            if resp.get("id") != rid:
                self._fail(f"response id {resp.get('id')!r} does not match request {rid!r}")
            if "error" in resp:
                self._fail(f"model error: {resp['error']}")
            return resp

    def detect(self, image: np.ndarray) -> list[Detection]:
        resp = self.request("detect", image)
        if "detections" not in resp:
            self._fail("detect response lacks 'detections'")
        try:
            return parse_detections(resp["detections"])
        except InferenceError:
            self.close()
            raise

    def classify(self, crop: np.ndarray) -> ClassScores:
        if self.classes is None:
            raise InferenceError("classify needs the active class list")
        resp = self.request("classify", crop)
        if "scores" not in resp:
            self._fail("classify response lacks 'scores'")
        try:
            return parse_scores(resp["scores"], self.classes)
        except InferenceError:
            self.close()
            raise
