"""Reference HTTP logit backend serving TableModel files.

Used by integration tests and the `logitfuse mock-server` subcommand. Each
model may carry an artificial per-request delay; max_inflight (when set)
returns 503 once exceeded, exercising the client's overload path.
"""

from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Mapping, Optional

from .providers import TableModel


class MockLogitServer:
    def __init__(
        self,
        models: Mapping[str, TableModel],
        delays_ms: Optional[Mapping[str, float]] = None,
        host: str = "127.0.0.1",
        port: int = 0,
        max_inflight: Optional[int] = None,
    ) -> None:
        self.models = dict(models)
        self.delays_ms = dict(delays_ms or {})
        self._inflight = threading.Semaphore(max_inflight) if max_inflight is not None else None
        self._httpd = ThreadingHTTPServer((host, port), _make_handler(self))
        self._httpd.daemon_threads = True
        self.host = host
        self.port = self._httpd.server_address[1]
        self._thread: Optional[threading.Thread] = None

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def start(self) -> "MockLogitServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def serve_forever(self) -> None:
        self._httpd.serve_forever()

    def __enter__(self) -> "MockLogitServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def _make_handler(server: MockLogitServer):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"
        disable_nagle_algorithm = True  # headers and body go out as separate writes

        def log_message(self, *args) -> None:
            pass

        def _reply(self, status: int, payload: dict) -> None:
            body = json.dumps(payload, separators=(",", ":")).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_POST(self) -> None:
            if self.path != "/v1/logits":
                self._reply(404, {"error": "not found"})
                return
            if server._inflight is not None and not server._inflight.acquire(blocking=False):
                self._reply(503, {"error": "overloaded"})
                return
            try:
                self._handle_logits()
            finally:
                if server._inflight is not None:
                    server._inflight.release()

        def _handle_logits(self) -> None:
            length = int(self.headers.get("Content-Length", 0))
            try:
                payload = json.loads(self.rfile.read(length))
            except json.JSONDecodeError:
                self._reply(400, {"error": "malformed json"})
                return
            model_id = payload.get("model")
            table = server.models.get(model_id)
            if table is None:
                self._reply(422, {"error": f"unknown model {model_id!r}"})
                return
            tokens = payload.get("tokens")
            size = table.vocabulary.size
            if not isinstance(tokens, list) or any(
                not isinstance(t, int) or isinstance(t, bool) or not 0 <= t < size for t in tokens
            ):
                self._reply(422, {"error": "bad token ids"})
                return
            delay = server.delays_ms.get(model_id, 0.0)
            if delay:
                time.sleep(delay / 1000.0)
            vec = table.next_logits(tokens)
            self._reply(200, {"logits": [float(x) for x in vec], "vocab_size": size})

    return Handler
