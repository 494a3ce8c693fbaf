"""HTTP surface for the loop: status, labeling sessions, report, console.

The loop runs in a worker thread. In interactive mode it blocks inside
label_batch until the active session is complete; the API exposes the
session to the browser console and feeds submitted labels back in. All
shared state sits behind one lock, and readers always get a consistent
snapshot.
"""
from __future__ import annotations

import os
import threading

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from .config import RunConfig
from .labeling import LabelingError, LabelingSession, open_session, submit_labels
from .loop import RunReport, run_joint_loop


class LoopController:
    """Shared state between the loop thread and the HTTP handlers."""

    def __init__(self):
        self._lock = threading.Lock()
        self._session_done = threading.Condition(self._lock)
        self.phase = "starting"
        self.iteration = 0
        self.safe_fraction_history: list[float] = []
        self.session: LabelingSession | None = None
        self.report: RunReport | None = None
        self.error: str | None = None

    # -- loop side ---------------------------------------------------------

    def observer(self, event: str, payload: dict) -> None:
        with self._lock:
            if event == "phase":
                self.phase = payload["phase"]
                self.iteration = payload["iteration"]
            elif event == "record":
                self.safe_fraction_history.append(1.0 - payload["record"].unsafe_fraction)
            elif event == "report":
                self.report = payload["report"]

    def label_batch(self, traces, iteration: int) -> LabelingSession:
        """Publish a session and block until the console completes it."""
        with self._lock:
            session = open_session(traces, "interactive", iteration=iteration)
            self.session = session
            while not session.is_complete:
                self._session_done.wait()
            self.session = None
            return session

    def fail(self, message: str) -> None:
        with self._lock:
            self.error = message
            self.phase = "failed"

    # -- HTTP side ---------------------------------------------------------

    def status_snapshot(self) -> dict:
        with self._lock:
            return {
                "iteration": self.iteration,
                "phase": self.phase,
                "safe_fraction_history": list(self.safe_fraction_history),
                "error": self.error,
            }

    def session_snapshot(self, grid: dict) -> dict:
        with self._lock:
            if self.session is None:
                return {"pending": [], "labeled_count": 0}
            pending = [
                {
                    "id": i,
                    "trace": self.session.traces[i].to_dict(),
                    "grid": dict(grid, goal_hint=None),
                }
                for i in self.session.pending_ids()
            ]
            return {"pending": pending, "labeled_count": len(self.session.labels)}

    def submit(self, labels: list[tuple[int, str]]) -> dict:
        with self._lock:
            if self.session is None:
                raise LabelingError("no labeling session is active")
            submit_labels(self.session, labels)
            accepted = len(labels)
            remaining = len(self.session.pending_ids())
            if self.session.is_complete:
                self._session_done.notify_all()
            return {"accepted": accepted, "remaining": remaining}

    def report_snapshot(self) -> dict | None:
        with self._lock:
            return self.report.to_dict() if self.report is not None else None


def create_app(cfg: RunConfig, controller: LoopController, static_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="stlmine console API")
    env = cfg.env
    grid = {"width": env.width, "height": env.height}

    @app.exception_handler(LabelingError)
    async def labeling_error(_request: Request, exc: LabelingError):
        return JSONResponse(
            status_code=400,
            content={"error": exc.__class__.__name__, "detail": str(exc)},
        )

    @app.get("/api/status")
    def status():
        return controller.status_snapshot()

    @app.get("/api/session")
    def session():
        return controller.session_snapshot(grid)

    @app.post("/api/session/labels")
    async def post_labels(request: Request):
        body = await request.json()
        if not isinstance(body, list):
            return JSONResponse(
                status_code=400,
                content={"error": "BadPayload", "detail": "expected a list of labels"},
            )
        try:
            labels = [(int(item["id"]), str(item["label"])) for item in body]
        except (KeyError, TypeError, ValueError) as exc:
            return JSONResponse(
                status_code=400,
                content={"error": "BadPayload", "detail": f"malformed label entry: {exc}"},
            )
        return controller.submit(labels)

    @app.get("/api/report")
    def report():
        current = controller.report_snapshot()
        if current is None:
            return {"status": "running", "records": [], "iterations": 0}
        return current

    if static_dir and os.path.isdir(static_dir):
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="console")
    return app


def default_static_dir() -> str | None:
    """The built console bundle, when present next to the package."""
    here = os.path.dirname(os.path.abspath(__file__))
    for candidate in (
        os.path.join(here, "..", "..", "frontend", "dist"),
        os.path.join(os.getcwd(), "frontend", "dist"),
    ):
        candidate = os.path.normpath(candidate)
        if os.path.isdir(candidate):
            return candidate
    return None


def start_loop_thread(cfg: RunConfig, controller: LoopController) -> threading.Thread:
    def worker():
        try:
            labeler = controller if cfg.loop.labeling_mode == "interactive" else None
            run_joint_loop(cfg, labeler=labeler, observer=controller.observer)
        except Exception as exc:  # surfaced through /api/status
            controller.fail(f"{exc.__class__.__name__}: {exc}")

    thread = threading.Thread(target=worker, name="stlmine-loop", daemon=True)
    thread.start()
    return thread


def serve(cfg: RunConfig, port: int, host: str = "127.0.0.1") -> None:
    import uvicorn

    controller = LoopController()
    app = create_app(cfg, controller, default_static_dir())
    start_loop_thread(cfg, controller)
    uvicorn.run(app, host=host, port=port, log_level="warning")
