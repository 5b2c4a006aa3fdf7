"""In-process stand-in for a VLM server speaking the caption/attribute protocol.

Modes
-----
* ``script``: answers come from a fixture (dict or JSON/YAML file)::

      attributes:               # query -> {candidate: probability}
        "What is the weather in this video?": {sunny: 0.7, cloudy: 0.2, rainy: 0.1}
      logprobs:                 # query -> {candidate: log-probability}
        ...
      captions:                 # first entry whose "match" occurs in the prompt wins
        - {match: "red traffic light", text: "Cars are waiting at the light."}
      default_caption: "No additional risks are visible."
      fail_first: 0             # answer 503 to the first N requests

* ``echo``: the caption is the prompt itself; attribute probabilities are a
  deterministic function of the query text.

Unscripted attribute queries get probabilities 0.6, 0.4 / (n - 1), ... so the
first candidate wins.
"""

from __future__ import annotations

import hashlib
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional

import yaml


def load_fixture(path) -> dict:
    text = Path(path).read_text()
    return yaml.safe_load(text) or {}


def _default_probabilities(candidates: list[str]) -> dict[str, float]:
    if len(candidates) == 1:
        return {candidates[0]: 1.0}
    rest = 0.4 / (len(candidates) - 1)
    return {c: (0.6 if i == 0 else rest) for i, c in enumerate(candidates)}


def _echo_probabilities(query: str, candidates: list[str]) -> dict[str, float]:
    raw = [int.from_bytes(hashlib.sha256(f"{query}|{c}".encode()).digest()[:4], "big") + 1
           for c in candidates]
    total = float(sum(raw))
    return {c: r / total for c, r in zip(candidates, raw)}


class MockVlmServer:
    """Threaded HTTP server bound to localhost; use as a context manager."""

    def __init__(self, fixture: Optional[dict | str | Path] = None, mode: str = "script",
                 host: str = "127.0.0.1", port: int = 0):
        if mode not in ("script", "echo"):
            raise ValueError(f"unknown mock mode {mode!r}")
        if isinstance(fixture, (str, Path)):
            fixture = load_fixture(fixture)
        self.fixture = dict(fixture or {})
        self.mode = mode
        self.requests: list[tuple[str, dict]] = []
        self._lock = threading.Lock()
        self._failures_left = int(self.fixture.get("fail_first", 0))
        self._httpd = ThreadingHTTPServer((host, port), self._handler())
        self._httpd.daemon_threads = True
        self._thread: Optional[threading.Thread] = None

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "MockVlmServer":
        # short poll so stop() returns promptly
        self._thread = threading.Thread(target=self._httpd.serve_forever, kwargs={"poll_interval": 0.05},
                                        daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self) -> "MockVlmServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    def serve_forever(self) -> None:
        self._httpd.serve_forever()

    # request handling

    def _should_fail(self) -> bool:
        with self._lock:
            if self._failures_left > 0:
                self._failures_left -= 1
                return True
            return False

    def answer(self, path: str, body: dict) -> tuple[int, dict]:
        with self._lock:
            self.requests.append((path, body))
        if self._should_fail():
            return 503, {"error": "scripted failure"}
        if path == "/v1/attributes":
            query = str(body.get("query", ""))
            candidates = [str(c) for c in body.get("candidates", [])]
            if not candidates:
                return 400, {"error": "no candidates"}
            if self.mode == "echo":
                return 200, {"probabilities": _echo_probabilities(query, candidates)}
            if query in self.fixture.get("logprobs", {}):
                return 200, {"logprobs": self.fixture["logprobs"][query]}
            if query in self.fixture.get("attributes", {}):
                return 200, {"probabilities": self.fixture["attributes"][query]}
            return 200, {"probabilities": _default_probabilities(candidates)}
        if path == "/v1/caption":
            prompt = str(body.get("prompt", ""))
            if self.mode == "echo":
                return 200, {"text": prompt}
            for entry in self.fixture.get("captions", []):
                if entry.get("match", "") in prompt:
                    return 200, {"text": entry["text"]}
            return 200, {"text": self.fixture.get("default_caption",
                                                  "No additional risks are visible.")}
        return 404, {"error": f"unknown path {path}"}

    def _handler(self):
        server = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):  # noqa: N802 (http.server naming)
                length = int(self.headers.get("Content-Length", 0))
                try:
                    body = json.loads(self.rfile.read(length) or b"{}")
                except json.JSONDecodeError:
                    status, payload = 400, {"error": "invalid JSON"}
                else:
                    status, payload = server.answer(self.path, body)
                data = json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, fmt, *args):
                pass

        return Handler
