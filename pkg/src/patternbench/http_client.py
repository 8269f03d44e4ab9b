"""Thin blocking HTTP/1.1 client used by the proxy forwarder, the coordinator,
the workload generator and the tests. One request per connection."""

from __future__ import annotations

import http.client
import socket
import time
from dataclasses import dataclass, field


class UpstreamTimeout(Exception):
    """The upstream did not answer within the attempt timeout."""


class UpstreamConnectError(Exception):
    """Connection refused, reset or otherwise failed before a response arrived."""


@dataclass
class HttpResponse:
    status: int
    headers: dict[str, str] = field(default_factory=dict)
    body: bytes = b""

    def header(self, name: str, default: str = "") -> str:
        return self.headers.get(name.lower(), default)


def http_call(
    method: str,
    host: str,
    port: int,
    path: str,
    headers: dict[str, str] | None = None,
    body: bytes | None = None,
    timeout: float = 30.0,
) -> HttpResponse:
    """Issue one request; raises UpstreamTimeout / UpstreamConnectError."""
    send_headers = {"Connection": "close"}
    if headers:
        send_headers.update(headers)
    if body is not None and "content-length" not in {k.lower() for k in send_headers}:
        send_headers["Content-Length"] = str(len(body))
    conn = http.client.HTTPConnection(host, port, timeout=timeout)
    try:
        try:
            conn.request(method, path, body=body, headers=send_headers)
            resp = conn.getresponse()
            payload = resp.read()
        except (socket.timeout, TimeoutError) as exc:
            raise UpstreamTimeout(f"{method} {host}:{port}{path} timed out after {timeout}s") from exc
        except (ConnectionError, http.client.HTTPException, OSError) as exc:
            raise UpstreamConnectError(f"{method} {host}:{port}{path}: {exc}") from exc
        resp_headers = {name.lower(): value for name, value in resp.getheaders()}
        return HttpResponse(status=resp.status, headers=resp_headers, body=payload)
    finally:
        conn.close()


def follow_async_reply(
    response: HttpResponse,
    host: str,
    port: int,
    poll_interval: float = 0.05,
    deadline_s: float = 30.0,
    headers: dict[str, str] | None = None,
) -> HttpResponse:
    """Resolve a 202 + Location response by polling until a terminal status.

    Non-202 responses pass through unchanged, so callers can wrap every call.
    """
    if response.status != 202 or not response.header("location"):
        return response
    location = response.header("location")
    deadline = time.monotonic() + deadline_s
    while time.monotonic() < deadline:
        polled = http_call("GET", host, port, location, headers=headers, timeout=deadline_s)
        if polled.status != 202:
            return polled
        time.sleep(poll_interval)
    raise UpstreamTimeout(f"async job at {location} did not complete within {deadline_s}s")
