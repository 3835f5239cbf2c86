"""Shared fixtures: a scriptable HTTP stub for the remote backend and a
small planted-relevance corpus reused across harness tests."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from genattr.harness import make_planted_benchmark


class _StubState:
    """What the next /generate responses should be.

    `script` is a list consumed front to back; when it runs dry the stub
    falls back to `default`. Entries are either a dict (sent as JSON) or an
    int (sent as a bare HTTP status with empty body).
    """

    def __init__(self):
        self.default = {"answer": "A"}
        self.script = []
        self.requests = []


class _StubHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        state = self.server.state
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length)) if length else None
        state.requests.append((self.path, body))
        entry = state.script.pop(0) if state.script else state.default
        if isinstance(entry, int):
            self.send_response(entry)
            self.end_headers()
            return
        payload = json.dumps(entry).encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, fmt, *args):
        pass


@pytest.fixture
def http_stub():
    server = HTTPServer(("127.0.0.1", 0), _StubHandler)
    server.state = _StubState()
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield f"http://127.0.0.1:{server.server_port}", server.state
    finally:
        server.shutdown()
        thread.join()


@pytest.fixture(scope="session")
def small_benchmark():
    return make_planted_benchmark(num_records=30, num_passages=6, seed=17)
