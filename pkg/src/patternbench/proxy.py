"""Concurrent HTTP reverse proxy with an injectable middleware chain.

This is the non-intrusive injection point: each route binding fronts one
upstream service, and pattern middlewares attach to the binding without the
upstream changing in any way. Chains are immutable tuples swapped atomically
under a writer lock, so an in-flight request always sees a complete chain
(the one that was installed when it arrived).
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from patternbench.config import PatternInjection, PatternKind
from patternbench.http_client import (
    HttpResponse,
    UpstreamConnectError,
    UpstreamTimeout,
    http_call,
)
from patternbench.httpbase import (
    HOP_BY_HOP,
    BodyTooLarge,
    QuietHandler,
    QuietHTTPServer,
    serve_in_thread,
)

logger = logging.getLogger(__name__)

DEFAULT_UPSTREAM_TIMEOUT_S = 30.0

#: fixed middleware precedence, outermost first: the breaker guards everything,
#: keyed-response patterns sit inside it, async-reply detaches last
CHAIN_ORDER = {
    PatternKind.CIRCUIT_BREAKER: 10,
    PatternKind.CACHE_ASIDE: 20,
    PatternKind.REQUEST_COLLAPSING: 30,
    PatternKind.GATEWAY_OFFLOADING: 40,
    PatternKind.ASYNC_REQUEST_REPLY: 50,
}


class ProxyError(Exception):
    pass


class PortInUseError(ProxyError):
    def __init__(self, port: int):
        super().__init__(f"listen port {port} is already in use")
        self.port = port


class UnknownServiceError(ProxyError):
    pass


class DuplicatePatternError(ProxyError):
    pass


class PatternNotInstalledError(ProxyError):
    pass


@dataclass
class ProxyRequest:
    method: str
    path: str
    query: str = ""
    headers: dict[str, str] = field(default_factory=dict)
    body: bytes = b""
    received_at: float = 0.0
    #: per-request scratch space (e.g. the breaker's per-attempt timeout)
    meta: dict = field(default_factory=dict)

    def header(self, name: str, default: str = "") -> str:
        return self.headers.get(name.lower(), default)

    def path_qs(self) -> str:
        return f"{self.path}?{self.query}" if self.query else self.path


@dataclass
class ProxyResponse:
    status: int
    headers: dict[str, str] = field(default_factory=dict)
    body: bytes = b""
    upstream_latency_us: int = 0

    def header(self, name: str, default: str = "") -> str:
        return self.headers.get(name.lower(), default)


NextHandler = Callable[[ProxyRequest], ProxyResponse]


class Middleware:
    """One injected pattern on a route. Must be safe under concurrent requests."""

    kind: PatternKind

    def handle(self, request: ProxyRequest, call_next: NextHandler) -> ProxyResponse:
        raise NotImplementedError

    def close(self) -> None:
        pass


@dataclass
class RouteBinding:
    service_name: str
    listen_port: int
    path_prefix: str
    upstream: tuple[str, int]
    chain: tuple[Middleware, ...] = ()

    def matches(self, path: str) -> bool:
        return path.startswith(self.path_prefix)


def run_chain(chain: tuple[Middleware, ...], request: ProxyRequest,
              terminal: NextHandler) -> ProxyResponse:
    def dispatch(index: int, req: ProxyRequest) -> ProxyResponse:
        if index == len(chain):
            return terminal(req)
        return chain[index].handle(req, lambda r: dispatch(index + 1, r))

    return dispatch(0, request)


def forward_headers(request: ProxyRequest, upstream: tuple[str, int]) -> dict[str, str]:
    headers = {
        name: value for name, value in request.headers.items()
        if name.lower() not in HOP_BY_HOP and name.lower() != "host"
    }
    headers["Host"] = f"{upstream[0]}:{upstream[1]}"
    return headers


class _ProxyHTTPServer(QuietHTTPServer):
    engine: "ProxyEngine"
    listen_port: int


class _ProxyHandler(QuietHandler):
    def _serve(self) -> None:
        server: _ProxyHTTPServer = self.server  # type: ignore[assignment]
        path, query = self.split_target()
        try:
            body = self.read_body()
        except BodyTooLarge:
            self.write_response(413, {"content-type": "text/plain"}, b"body too large")
            return
        request = ProxyRequest(
            method=self.command,
            path=path,
            query=query,
            headers=self.lower_headers(),
            body=body,
            received_at=time.time(),
        )
        response = server.engine.dispatch(server.listen_port, request)
        self.write_response(response.status, response.headers, response.body)

    do_GET = do_POST = do_PUT = do_DELETE = do_HEAD = _serve


class ProxyEngine:
    """Hosts route bindings, executes chains, forwards upstream."""

    def __init__(self, bindings: list[RouteBinding]):
        self._bindings = list(bindings)
        self._servers: list[_ProxyHTTPServer] = []
        self._threads: list[threading.Thread] = []
        self._config_lock = threading.Lock()
        self._started = False

    # -- lifecycle ----------------------------------------------------------

    def start(self) -> "ProxyEngine":
        if self._started:
            return self
        by_port: dict[int, list[RouteBinding]] = {}
        zero_port: list[RouteBinding] = []
        for binding in self._bindings:
            if binding.listen_port == 0:
                zero_port.append(binding)
            else:
                by_port.setdefault(binding.listen_port, []).append(binding)
        try:
            for port in by_port:
                self._servers.append(self._bind(port))
            for binding in zero_port:
                server = self._bind(0)
                binding.listen_port = server.server_address[1]
                server.listen_port = binding.listen_port
                self._servers.append(server)
        except Exception:
            self.stop()
            raise
        for server in self._servers:
            self._threads.append(serve_in_thread(server, f"proxy:{server.listen_port}"))
        self._started = True
        return self

    def _bind(self, port: int) -> _ProxyHTTPServer:
        try:
            server = _ProxyHTTPServer(("127.0.0.1", port), _ProxyHandler)
        except OSError as exc:
            raise PortInUseError(port) from exc
        server.engine = self
        server.listen_port = server.server_address[1]
        return server

    def stop(self) -> None:
        for server in self._servers:
            server.shutdown()
            server.server_close()
        self._servers.clear()
        self._threads.clear()
        for binding in self._bindings:
            for middleware in binding.chain:
                middleware.close()
        self._started = False

    # -- routing ------------------------------------------------------------

    @property
    def bindings(self) -> list[RouteBinding]:
        return list(self._bindings)

    def binding_for(self, service_name: str) -> RouteBinding:
        for binding in self._bindings:
            if binding.service_name == service_name:
                return binding
        raise UnknownServiceError(f"no route binds service {service_name!r}")

    def port_of(self, service_name: str) -> int:
        return self.binding_for(service_name).listen_port

    def _select(self, listen_port: int, path: str) -> Optional[RouteBinding]:
        best: Optional[RouteBinding] = None
        for binding in self._bindings:
            if binding.listen_port != listen_port or not binding.matches(path):
                continue
            if best is None or len(binding.path_prefix) > len(best.path_prefix):
                best = binding
        return best

    def dispatch(self, listen_port: int, request: ProxyRequest) -> ProxyResponse:
        binding = self._select(listen_port, request.path)
        if binding is None:
            return ProxyResponse(404, {"content-type": "text/plain"}, b"no route")
        chain = binding.chain  # snapshot; injection swaps the tuple atomically
        upstream = binding.upstream
        try:
            return run_chain(chain, request, lambda req: self.forward(req, upstream))
        except UpstreamTimeout as exc:
            return ProxyResponse(504, {"content-type": "text/plain",
                                       "x-proxy-error": "upstream-timeout"}, str(exc).encode())
        except UpstreamConnectError as exc:
            return ProxyResponse(502, {"content-type": "text/plain",
                                       "x-proxy-error": "upstream-unreachable"}, str(exc).encode())
        except Exception:
            logger.exception("middleware chain failed on %s %s", request.method, request.path)
            return ProxyResponse(500, {"content-type": "text/plain"}, b"proxy internal error")

    def forward(self, request: ProxyRequest, upstream: tuple[str, int]) -> ProxyResponse:
        """Terminal of every chain: one upstream HTTP call."""
        timeout = float(request.meta.get("upstream_timeout", DEFAULT_UPSTREAM_TIMEOUT_S))
        started = time.monotonic()
        result: HttpResponse = http_call(
            request.method, upstream[0], upstream[1], request.path_qs(),
            headers=forward_headers(request, upstream),
            body=request.body if request.body else None,
            timeout=timeout,
        )
        latency_us = int((time.monotonic() - started) * 1e6)
        headers = {name: value for name, value in result.headers.items()
                   if name not in HOP_BY_HOP}
        return ProxyResponse(result.status, headers, result.body, upstream_latency_us=latency_us)

    # -- pattern injection ----------------------------------------------------

    def inject(self, injection: PatternInjection) -> RouteBinding:
        """Attach the pattern to its target service's route.

        Requests already inside the old chain complete under it; new arrivals
        see the new chain.
        """
        from patternbench.patterns import build_middleware

        with self._config_lock:
            binding = self.binding_for(injection.target_service)
            if any(mw.kind == injection.kind for mw in binding.chain):
                raise DuplicatePatternError(
                    f"duplicate pattern: {injection.kind.value} already on {binding.service_name}")
            middleware = build_middleware(injection)
            binding.chain = tuple(sorted(
                binding.chain + (middleware,), key=lambda mw: CHAIN_ORDER[mw.kind]))
            return binding

    def remove(self, kind: PatternKind, service_name: str) -> RouteBinding:
        """Detach the pattern and discard its internal state."""
        with self._config_lock:
            binding = self.binding_for(service_name)
            found = [mw for mw in binding.chain if mw.kind == kind]
            if not found:
                raise PatternNotInstalledError(
                    f"pattern not present: {kind.value} on {service_name}")
            binding.chain = tuple(mw for mw in binding.chain if mw.kind != kind)
        for middleware in found:
            middleware.close()
        return binding


def start_proxy(bindings: list[RouteBinding]) -> ProxyEngine:
    """Bind every listen port and begin serving; raises PortInUseError eagerly."""
    return ProxyEngine(bindings).start()
