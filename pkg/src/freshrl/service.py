"""HTTP/JSON feedback-session server: the human side of review sessions.

The trainer opens a session on the hub and blocks; a browser (or any HTTP
client) walks the served trajectory and posts good / bad / not_sure labels
or skips the remainder.  Accepted labels append to the feedback buffer
through the trainer's recorder; relabeling the same (step, target) wins
over the earlier label in place.  The session closes when the label budget
is reached, when every trajectory has been reviewed, or on timeout.
"""
from __future__ import annotations

import itertools
import threading
from typing import Literal

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .errors import UsageError

_session_counter = itertools.count(1)


class SessionHub:
    """Thread-safe state shared between the training loop and HTTP handlers."""

    def __init__(self):
        self._lock = threading.Lock()
        self._closed = threading.Event()
        self._closed.set()
        self.session_id: str | None = None
        self.is_open = False
        self.env_id: str | None = None
        self.action_names: list[str] = []
        self.labels_collected = 0
        self.trajectory = None
        self.cursor = 0
        self.budget = 0
        self.request_log: list[dict] = []
        self._provider = None
        self._recorder = None
        self._mark_reviewed = None
        self._label_positions: dict[tuple[int, int, str], int] = {}

    # -- trainer side -----------------------------------------------------
    def open_session(self, trajectory_provider, recorder, mark_reviewed,
                     budget: int, env_id: str, action_names: list[str]) -> None:
        with self._lock:
            if self.is_open:
                raise UsageError("a session is already open")
            self.session_id = f"session-{next(_session_counter)}"
            self.env_id = env_id
            self.action_names = list(action_names)
            self.labels_collected = 0
            self.cursor = 0
            self.budget = budget
            self.request_log = []
            self._provider = trajectory_provider
            self._recorder = recorder
            self._mark_reviewed = mark_reviewed
            self._label_positions = {}
            self.trajectory = trajectory_provider()
            if self.trajectory is None:
                self._close_locked()
                return
            self.is_open = True
            self._closed.clear()

    def wait_closed(self, timeout: float | None = None) -> bool:
        """Block until the session closes; force-close on timeout."""
        finished = self._closed.wait(timeout)
        if not finished:
            with self._lock:
                self._close_locked()
        return finished

    def _close_locked(self) -> None:
        self.is_open = False
        self.trajectory = None
        self._closed.set()

    # -- HTTP side ----------------------------------------------------------
    def state(self) -> dict:
        with self._lock:
            return {
                "session_id": self.session_id,
                "open": self.is_open,
                "env_id": self.env_id,
                "action_names": self.action_names,
                "labels_collected": self.labels_collected,
            }

    def current_trajectory(self) -> dict:
        with self._lock:
            if not self.is_open:
                raise UsageError("no open session")
            t = self.trajectory
            return {
                "trajectory_id": t.trajectory_id,
                "total_return": t.total_return,
                "steps": [
                    {
                        "index": i,
                        "render": s.render.to_json(),
                        "next_render": s.next_render.to_json(),
                        "action": s.action,
                        "action_name": self.action_names[s.action],
                        "env_reward": s.env_reward,
                    }
                    for i, s in enumerate(t.steps)
                ],
            }

    def submit_feedback(self, step_index: int, target: str, label: str) -> dict:
        with self._lock:
            if not self.is_open:
                raise UsageError("no open session")
            if not 0 <= step_index < len(self.trajectory.steps):
                raise UsageError(f"step index {step_index} out of range")
            self.request_log.append(
                {"step_index": step_index, "target": target, "label": label})
            self.cursor = max(self.cursor, step_index)
            if label == "not_sure":
                return {"accepted": True, "labels_collected": self.labels_collected,
                        "stored": False}
            key = (self.trajectory.trajectory_id, step_index, target)
            step = self.trajectory.steps[step_index]
            if key in self._label_positions:
                self._recorder.update_label(self._label_positions[key], label)
                return {"accepted": True, "labels_collected": self.labels_collected,
                        "stored": True, "replaced": True,
                        "warning": "label replaced earlier one for this step/target"}
            self._recorder.record(target, step, label)
            self._label_positions[key] = self._recorder.last_position()
            self.labels_collected += 1
            response = {"accepted": True, "labels_collected": self.labels_collected,
                        "stored": True}
            if self.labels_collected >= self.budget:
                self._close_locked()
            return response

    def skip(self) -> dict:
        with self._lock:
            if not self.is_open:
                raise UsageError("no open session")
            self.request_log.append({"skip": True})
            self._mark_reviewed(self.trajectory.trajectory_id)
            self.trajectory = self._provider()
            self.cursor = 0
            if self.trajectory is None:
                self._close_locked()
            return {"accepted": True}


class FeedbackRequest(BaseModel):
    step_index: int
    target: Literal["action", "state"]
    label: Literal["good", "bad", "not_sure"]


def create_app(hub: SessionHub, ui_dir: str | None = None,
               cors_origins: tuple[str, ...] = ("*",)) -> FastAPI:
    app = FastAPI(title="freshrl feedback console")
    app.add_middleware(
        CORSMiddleware, allow_origins=list(cors_origins),
        allow_methods=["*"], allow_headers=["*"])

    @app.get("/api/session")
    def session_state():
        return hub.state()

    @app.get("/api/trajectory/current")
    def current_trajectory():
        try:
            return hub.current_trajectory()
        except UsageError as exc:
            return JSONResponse({"error": str(exc)}, status_code=409)

    @app.post("/api/feedback")
    def feedback(req: FeedbackRequest):
        try:
            return hub.submit_feedback(req.step_index, req.target, req.label)
        except UsageError as exc:
            status = 409 if "session" in str(exc) else 400
            return JSONResponse({"accepted": False, "reason": str(exc)},
                                status_code=status)

    @app.post("/api/trajectory/skip")
    def skip():
        try:
            return hub.skip()
        except UsageError as exc:
            return JSONResponse({"accepted": False, "reason": str(exc)},
                                status_code=409)

    if ui_dir:
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app
