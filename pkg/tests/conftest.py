"""Shared fixtures: a mock OpenAI-style chat server for planner/metrics tests."""

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest


class MockChatServer:
    """Serves scripted replies to POST /chat/completions.

    Each entry of ``script`` is consumed in order and is one of:
      ("ok", content_str)   valid completion whose message content is given
      ("raw", bytes)        arbitrary response body (malformed JSON etc.)
      ("status", code)      an HTTP error
      ("sleep", seconds)    delay before a valid-but-late reply
    """

    def __init__(self):
        self.script = []
        self.requests = []
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                outer.requests.append(json.loads(self.rfile.read(length)))
                kind, payload = (
                    outer.script.pop(0) if outer.script else ("status", 500)
                )
                if kind == "sleep":
                    time.sleep(payload)
                    kind, payload = "ok", "late"
                if kind == "status":
                    self.send_response(payload)
                    self.end_headers()
                    return
                if kind == "raw":
                    body = payload
                else:
                    body = json.dumps(
                        {"choices": [{"message": {"content": payload}}]}
                    ).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    @property
    def url(self):
        host, port = self.server.server_address
        return f"http://{host}:{port}"

    def close(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def chat_server():
    server = MockChatServer()
    yield server
    server.close()
