"""Gateway offloading middleware: cross-cutting concerns (API-key auth, gzip
compression, access logging) handled in front of the coordinator instead of
inside the pipeline services."""

from __future__ import annotations

import gzip
import itertools
import json
import threading
import time
from collections import deque

from patternbench.config import Concern, GatewayOffloadConfig, PatternKind
from patternbench.proxy import Middleware, NextHandler, ProxyRequest, ProxyResponse

_MIN_COMPRESS_BYTES = 64
_LOG_RING = 100_000


class GatewayOffloadMiddleware(Middleware):
    kind = PatternKind.GATEWAY_OFFLOADING

    def __init__(self, config: GatewayOffloadConfig):
        self.config = config
        self.access_records: deque[dict] = deque(maxlen=_LOG_RING)
        self._ids = itertools.count(1)
        self._log_lock = threading.Lock()
        self._log_file = None
        if config.access_log_path:
            self._log_file = open(config.access_log_path, "a", encoding="utf-8")

    def close(self) -> None:
        if self._log_file is not None:
            self._log_file.close()
            self._log_file = None

    def _enabled(self, concern: Concern) -> bool:
        return concern in self.config.offloaded_concerns

    def handle(self, request: ProxyRequest, call_next: NextHandler) -> ProxyResponse:
        return self.offload_chain(request, call_next)

    def offload_chain(self, request: ProxyRequest, call_next: NextHandler) -> ProxyResponse:
        started = time.monotonic()
        request_id = str(next(self._ids))

        if self._enabled(Concern.AUTH_CHECK):
            presented = request.header("x-api-key")
            if presented not in self.config.api_keys:
                response = ProxyResponse(
                    401,
                    {"content-type": "application/json",
                     "x-pattern": "gateway-offloading", "x-request-id": request_id},
                    b'{"error":"missing or invalid x-api-key"}',
                )
                self._log(request, response, request_id, started)
                return response

        client_accepts_gzip = "gzip" in request.header("accept-encoding", "").lower()
        if self._enabled(Concern.COMPRESSION):
            # the offload itself: upstream services never compress
            request.headers["accept-encoding"] = "identity"

        response = call_next(request)

        if (self._enabled(Concern.COMPRESSION) and client_accepts_gzip
                and response.status == 200
                and len(response.body) >= _MIN_COMPRESS_BYTES
                and not response.header("content-encoding")):
            compressed = gzip.compress(response.body, compresslevel=6, mtime=0)
            headers = dict(response.headers)
            headers["content-encoding"] = "gzip"
            response = ProxyResponse(response.status, headers, compressed,
                                     response.upstream_latency_us)

        headers = dict(response.headers)
        headers["x-request-id"] = request_id
        response = ProxyResponse(response.status, headers, response.body,
                                 response.upstream_latency_us)
        self._log(request, response, request_id, started)
        return response

    def _log(self, request: ProxyRequest, response: ProxyResponse,
             request_id: str, started: float) -> None:
        if not self._enabled(Concern.ACCESS_LOGGING):
            return
        record = {
            "ts": time.time(),
            "request_id": request_id,
            "method": request.method,
            "path": request.path_qs(),
            "status": response.status,
            "latency_us": int((time.monotonic() - started) * 1e6),
            "request_bytes": len(request.body),
            "response_bytes": len(response.body),
        }
        self.access_records.append(record)
        if self._log_file is not None:
            line = json.dumps(record, sort_keys=True)
            with self._log_lock:
                self._log_file.write(line + "\n")
                self._log_file.flush()
