"""Minimal in-process HTTP server for exercising the HTTP providers.

Routes are callables ``(payload | None) -> (status, body_dict)`` keyed by
``"METHOD /path"``. A route may also be a list of such callables, consumed
one per request, to script failure-then-recovery sequences.
"""
from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


class _Handler(BaseHTTPRequestHandler):
    def log_message(self, *args):  # keep test output clean
        pass

    def _dispatch(self, method):
        server = self.server
        key = f"{method} {self.path.split('?')[0]}"
        server.requests.append({"key": key, "path": self.path})
        route = server.routes.get(key)
        if route is None:
            self._reply(404, {"error": f"no route {key}"})
            return
        if isinstance(route, list):
            handler = route.pop(0) if len(route) > 1 else route[0]
        else:
            handler = route
        payload = None
        length = int(self.headers.get("Content-Length") or 0)
        if length:
            payload = json.loads(self.rfile.read(length).decode("utf-8"))
            server.requests[-1]["payload"] = payload
        status, body = handler(payload)
        self._reply(status, body)

    def _reply(self, status, body):
        raw = (body if isinstance(body, (bytes, str)) else json.dumps(body))
        if isinstance(raw, str):
            raw = raw.encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")


class StubServer:
    def __init__(self, routes: dict):
        self.server = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
        self.server.routes = routes
        self.server.requests = []
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def requests(self):
        return self.server.requests

    @property
    def url(self) -> str:
        host, port = self.server.server_address
        return f"http://{host}:{port}"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()
