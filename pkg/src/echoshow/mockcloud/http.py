"""Loopback HTTP front end for ``MockCloud``."""

from __future__ import annotations

import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qsl, urlsplit

from ..cloud.transport import HttpRequest
from .service import MockCloud


def _handler(mock: MockCloud):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def _dispatch(self):
            parts = urlsplit(self.path)
            length = int(self.headers.get("Content-Length") or 0)
            body = self.rfile.read(length) if length else None
            req = HttpRequest(
                self.command, (self.headers.get("Host") or "").split(":")[0], parts.path,
                tuple(parse_qsl(parts.query, keep_blank_values=True)),
                tuple(self.headers.items()), body,
            )
            resp = mock.handle(req)
            self.send_response(resp.status)
            for k, v in resp.headers:
                self.send_header(k, v)
            self.send_header("Content-Length", str(len(resp.body)))
            self.end_headers()
            self.wfile.write(resp.body)

        do_GET = do_POST = do_PUT = do_DELETE = _dispatch

        def log_message(self, fmt, *args):
            pass

    return Handler


class MockServer:
    def __init__(self, mock: MockCloud, host: str = "127.0.0.1", port: int = 0):
        self.mock = mock
        self.httpd = ThreadingHTTPServer((host, port), _handler(mock))
        self.httpd.daemon_threads = True
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "MockServer":
        self._thread.start()
        return self

    def shutdown(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()


def serve(mock: MockCloud, host: str = "127.0.0.1", port: int = 0) -> MockServer:
    """Start answering on loopback in a background thread."""
    return MockServer(mock, host, port).start()
