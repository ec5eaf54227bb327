"""Shared fixtures: a session key pair, the default testbed, and a local HTTP
stub standing in for external vetting/selection endpoints.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from mcp_sentinel.adversary import build_testbed
from mcp_sentinel.manifest import generate_keypair


@pytest.fixture(scope="session")
def keypair():
    return generate_keypair()


@pytest.fixture(scope="session")
def testbed():
    return build_testbed()


class _StubHandler(BaseHTTPRequestHandler):
    """Scripted JSON responder; behavior keyed off the request path."""

    def do_POST(self):  # noqa: N802 (http.server API)
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length) or b"{}")
        if self.path == "/vet":
            description = body.get("description", "")
            score = 0.1 if "attacker" in description else 0.9
            payload = {"score": score, "rationale": "stub"}
            self._reply(200, payload)
        elif self.path == "/vet-malformed":
            self._reply(200, {"unexpected": True})
        elif self.path == "/vet-error":
            self._reply(503, {"error": "overloaded"})
        elif self.path == "/select":
            tools = body.get("tools", [])
            selected = tools[-1]["tool_id"] if tools else ""
            self._reply(200, {"selected_tool_id": selected})
        elif self.path == "/select-unknown":
            self._reply(200, {"selected_tool_id": "NotATool"})
        else:
            self._reply(404, {"error": "no such path"})

    def _reply(self, status: int, payload: dict) -> None:
        data = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):  # keep pytest output clean
        pass


@pytest.fixture(scope="session")
def http_stub():
    server = HTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()
