"""HTTP API over a live session, plus the answer channel for human experts.

One session per process.  The session loop is the only writer of session
state; request handlers read immutable snapshots (particle sets are
value-like) and deliver human answers through a bounded channel that accepts
at most one label per pending query.  Endpoints (JSON bodies):

    GET  /api/session    round, total rounds, policy, node names
    GET  /api/query      pending pair + predictive (null when none pending)
    POST /api/answer     {"pair": [i, j], "label": 0|1|2}
    GET  /api/marginals  D x D edge-existence marginals
    GET  /api/metrics    per-round metric series
    GET  /api/history    answered queries so far

Anything else under / serves the built UI assets when configured.
"""

from __future__ import annotations

import json
import logging
import queue
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional

from .oracles import PendingTimeout
from .posterior import edge_marginals
from .session import SessionConfig, SessionState, run_session, _sanitize

__all__ = ["AnswerChannel", "AnswerConflict", "SessionServer", "start_server"]

log = logging.getLogger("cape.server")

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json",
    ".svg": "image/svg+xml",
    ".map": "application/json",
    ".ico": "image/x-icon",
}


class AnswerConflict(RuntimeError):
    """Submitted answer does not match the pending query (or none is pending)."""


class AnswerChannel:
    """Hand-off point between the session loop and the HTTP handlers.

    The session blocks in `ask` until `submit` delivers a label for the
    currently pending pair; at most one answer is accepted per query.
    """

    def __init__(self):
        self._queue: queue.Queue = queue.Queue(maxsize=1)
        self._lock = threading.Lock()
        self.pending: Optional[tuple[int, int]] = None
        self._answered = False

    def ask(self, i: int, j: int, timeout: Optional[float] = None) -> int:
        with self._lock:
            self.pending = (i, j)
            self._answered = False
        try:
            return int(self._queue.get(timeout=timeout))
        except queue.Empty:
            raise PendingTimeout(f"no answer for pair ({i},{j}) in {timeout}s")
        finally:
            with self._lock:
                self.pending = None

    def submit(self, pair, label: int) -> None:
        if label not in (0, 1, 2):
            raise ValueError(f"label must be 0, 1 or 2, got {label!r}")
        pair = (int(pair[0]), int(pair[1]))
        with self._lock:
            if self.pending is None or pair != self.pending:
                raise AnswerConflict(
                    f"pair {list(pair)} is not the pending query")
            if self._answered:
                raise AnswerConflict("pending query already answered")
            self._answered = True
        self._queue.put(int(label))


class _StateHolder:
    """Latest session state, published by the loop, read by handlers."""

    def __init__(self):
        self._lock = threading.Lock()
        self.state: Optional[SessionState] = None

    def publish(self, state: SessionState) -> None:
        with self._lock:
            self.state = state

    def get(self) -> Optional[SessionState]:
        with self._lock:
            return self.state


class _Handler(BaseHTTPRequestHandler):
    server: "SessionServer"

    def log_message(self, fmt, *args):  # route through logging, not stderr
        log.debug("%s " + fmt, self.address_string(), *args)

    # -- helpers --

    def _json(self, status: int, payload: dict) -> None:
        body = json.dumps(_sanitize(payload)).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _error(self, status: int, message: str) -> None:
        self._json(status, {"error": message})

    def _state(self) -> Optional[SessionState]:
        return self.server.holder.get()

    # -- GET --

    def do_GET(self):
        path = self.path.split("?", 1)[0]
        state = self._state()
        if path.startswith("/api/"):
            if state is None:
                return self._error(503, "session not started")
            if path == "/api/session":
                return self._json(200, {
                    "round": state.t,
                    "rounds_total": state.config.rounds,
                    "policy": state.config.policy,
                    "d": state.pset.d,
                    "node_names": list(state.pset.node_names or
                                       [str(k) for k in range(state.pset.d)]),
                    "done": state.done,
                })
            if path == "/api/query":
                pending = state.pending
                if pending is None:
                    return self._json(200, {"pair": None, "names": None,
                                            "predictive": None,
                                            "round": state.t + 1,
                                            "done": state.done})
                i, j = pending["pair"]
                names = state.pset.node_names or [str(k) for k in range(state.pset.d)]
                return self._json(200, {
                    "pair": [i, j],
                    "names": [names[i], names[j]],
                    "predictive": pending["predictive"],
                    "round": pending["round"],
                    "done": False,
                })
            if path == "/api/marginals":
                marg = edge_marginals(state.pset)
                return self._json(200, {
                    "d": state.pset.d,
                    "names": list(state.pset.node_names or
                                  [str(k) for k in range(state.pset.d)]),
                    "marginals": [[float(v) for v in row] for row in marg],
                })
            if path == "/api/metrics":
                rounds = [row["round"] for row in state.rows]
                series: dict[str, list] = {}
                for row in state.rows:
                    for name, value in row["metrics"].items():
                        series.setdefault(name, []).append(value)
                return self._json(200, {"rounds": rounds, "series": series})
            if path == "/api/history":
                return self._json(200, {"records": [
                    {"round": r.round, "pair": [r.i, r.j], "label": r.label,
                     "policy": r.policy}
                    for r in state.history
                ]})
            return self._error(404, f"unknown endpoint {path}")
        return self._serve_static(path)

    def _serve_static(self, path: str) -> None:
        ui_dir = self.server.ui_dir
        if ui_dir is None:
            return self._error(404, "no UI assets configured")
        rel = path.lstrip("/") or "index.html"
        target = (ui_dir / rel).resolve()
        if not str(target).startswith(str(ui_dir.resolve())) or not target.is_file():
            return self._error(404, f"not found: {path}")
        body = target.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type",
                         _CONTENT_TYPES.get(target.suffix, "application/octet-stream"))
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    # -- POST --

    def do_POST(self):
        path = self.path.split("?", 1)[0]
        if path != "/api/answer":
            return self._error(404, f"unknown endpoint {path}")
        if self.server.channel is None:
            return self._error(409, "session does not accept human answers")
        try:
            length = int(self.headers.get("Content-Length", "0"))
            payload = json.loads(self.rfile.read(length) or b"{}")
            pair = payload["pair"]
            label = payload["label"]
            if (not isinstance(pair, list) or len(pair) != 2
                    or not all(isinstance(v, int) for v in pair)):
                raise ValueError("pair must be [i, j] with integer indices")
            if not isinstance(label, int):
                raise ValueError("label must be an integer")
        except (KeyError, ValueError, json.JSONDecodeError) as exc:
            return self._error(400, f"malformed answer: {exc}")
        try:
            self.server.channel.submit(pair, label)
        except AnswerConflict as exc:
            return self._error(409, str(exc))
        except ValueError as exc:
            return self._error(400, str(exc))
        state = self._state()
        return self._json(200, {"ok": True,
                                "round": state.t + 1 if state else None})


class SessionServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, bind: tuple[str, int], holder: _StateHolder,
                 channel: Optional[AnswerChannel], ui_dir: Optional[Path]):
        super().__init__(bind, _Handler)
        self.holder = holder
        self.channel = channel
        self.ui_dir = Path(ui_dir) if ui_dir else None


def start_server(config: SessionConfig, bind: str = "127.0.0.1:8000",
                 ui_dir=None, out_dir=None,
                 ) -> tuple[SessionServer, threading.Thread, _StateHolder]:
    """Start the session loop in a worker thread and serve the API around it.

    Returns (server, session_thread, state_holder); the caller decides
    whether to block on `serve_forever` (CLI) or drive requests itself
    (tests).
    """
    host, _, port = bind.partition(":")
    holder = _StateHolder()
    needs_channel = config.oracle.get("kind") == "human"
    channel = AnswerChannel() if needs_channel else None

    def _run():
        try:
            run_session(config, out_dir=out_dir, human_channel=channel,
                        on_state=holder.publish)
        except Exception:  # pragma: no cover - surfaced via logs in serve mode
            log.exception("session loop crashed")

    thread = threading.Thread(target=_run, name="cape-session", daemon=True)
    server = SessionServer((host or "127.0.0.1", int(port or 8000)),
                           holder, channel, ui_dir)
    thread.start()
    return server, thread, holder
