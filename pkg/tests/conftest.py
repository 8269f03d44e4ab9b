import json
import socket
import threading
import time
from dataclasses import replace

import pytest

from patternbench.config import default_case_study
from patternbench.httpbase import QuietHandler, QuietHTTPServer, serve_in_thread
from patternbench.proxy import ProxyEngine, RouteBinding


def free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


class StubBackend:
    """Scriptable counting HTTP backend for pattern tests.

    The script is a callable (method, path, query, headers, body) ->
    (status, headers, body); default echoes a deterministic payload. ``delay_s``
    sleeps before answering, which is how collapse/timeout scenarios are built.
    """

    def __init__(self, script=None, delay_s: float = 0.0):
        self.script = script or self._default_script
        self.delay_s = delay_s
        self.calls = 0
        self.concurrent = 0
        self.max_concurrent = 0
        self.seen: list[tuple[str, str, str]] = []
        self.per_user_concurrent: dict[str, int] = {}
        self.closed_loop_violations = 0
        self._lock = threading.Lock()
        self._server: QuietHTTPServer | None = None
        self.port = 0

    @staticmethod
    def _default_script(method, path, query, headers, body):
        payload = json.dumps({"method": method, "path": path, "query": query,
                              "body_sha": len(body)}).encode()
        return 200, {"content-type": "application/json"}, payload

    def __enter__(self):
        backend = self

        class Handler(QuietHandler):
            def _serve(self):
                path, query = self.split_target()
                body = self.read_body()
                headers = self.lower_headers()
                user = headers.get("x-user-id", "")
                with backend._lock:
                    backend.calls += 1
                    backend.concurrent += 1
                    backend.max_concurrent = max(backend.max_concurrent,
                                                 backend.concurrent)
                    backend.seen.append((self.command, path, query))
                    if user:
                        current = backend.per_user_concurrent.get(user, 0) + 1
                        backend.per_user_concurrent[user] = current
                        if current > 1:
                            backend.closed_loop_violations += 1
                try:
                    if backend.delay_s > 0:
                        time.sleep(backend.delay_s)
                    status, out_headers, out_body = backend.script(
                        self.command, path, query, headers, body)
                    self.write_response(status, out_headers, out_body)
                finally:
                    with backend._lock:
                        backend.concurrent -= 1
                        if user:
                            backend.per_user_concurrent[user] -= 1

            do_GET = do_POST = do_PUT = do_DELETE = _serve

        self._server = QuietHTTPServer(("127.0.0.1", 0), Handler)
        self.port = self._server.server_address[1]
        serve_in_thread(self._server, f"stub:{self.port}")
        return self

    def __exit__(self, *exc):
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
        return False


@pytest.fixture
def stub_backend():
    with StubBackend() as backend:
        yield backend


def proxy_for(backend: StubBackend, service_name: str = "stub-service") -> ProxyEngine:
    binding = RouteBinding(service_name=service_name, listen_port=0, path_prefix="/",
                           upstream=("127.0.0.1", backend.port))
    return ProxyEngine([binding]).start()


@pytest.fixture
def proxied_stub(stub_backend):
    engine = proxy_for(stub_backend)
    yield engine, stub_backend
    engine.stop()


def small_case_study(size: int = 120):
    config = default_case_study()
    return replace(config, dataset=replace(config.dataset, size=size))


@pytest.fixture(scope="module")
def deployment():
    """One small ephemeral deployment shared by a module's read-only tests."""
    from patternbench.orchestrator import deploy

    dep = deploy(small_case_study(), ephemeral=True)
    yield dep
    dep.stop()
