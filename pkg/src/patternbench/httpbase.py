"""Shared HTTP/1.1 server scaffolding for the proxy and the testbed services."""

from __future__ import annotations

import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

MAX_BODY_BYTES = 16 * 1024 * 1024

#: per RFC 7230 these never cross a proxy hop
HOP_BY_HOP = frozenset({
    "connection", "keep-alive", "proxy-authenticate", "proxy-authorization",
    "te", "trailer", "trailers", "transfer-encoding", "upgrade",
})


class BodyTooLarge(Exception):
    pass


class QuietHTTPServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True
    request_queue_size = 128
    block_on_close = False


class QuietHandler(BaseHTTPRequestHandler):
    """Base handler: no access-log spam, explicit framing, Connection: close."""

    protocol_version = "HTTP/1.1"
    server_version = "patternbench"

    def log_message(self, format, *args):  # noqa: A002 - stdlib signature
        pass

    def split_target(self) -> tuple[str, str]:
        path, _, query = self.path.partition("?")
        return path, query

    def lower_headers(self) -> dict[str, str]:
        return {name.lower(): value for name, value in self.headers.items()}

    def read_body(self) -> bytes:
        length = int(self.headers.get("Content-Length") or 0)
        if length > MAX_BODY_BYTES:
            raise BodyTooLarge(str(length))
        if length <= 0:
            return b""
        return self.rfile.read(length)

    def write_response(self, status: int, headers: dict[str, str], body: bytes) -> None:
        try:
            self.send_response_only(status)
            for name, value in headers.items():
                if name.lower() in HOP_BY_HOP or name.lower() == "content-length":
                    continue
                self.send_header(name, value)
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Connection", "close")
            self.end_headers()
            if body:
                self.wfile.write(body)
        except (BrokenPipeError, ConnectionResetError):
            pass  # client went away mid-write
        self.close_connection = True


def serve_in_thread(server: QuietHTTPServer, name: str) -> threading.Thread:
    thread = threading.Thread(target=server.serve_forever, kwargs={"poll_interval": 0.1},
                              name=name, daemon=True)
    thread.start()
    return thread
