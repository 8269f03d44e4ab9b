"""Keyed-response middlewares: request collapsing (single-flight, with an
optional id-batching window) and the cache-aside TTL/LRU response cache."""

from __future__ import annotations

import json
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Optional
from urllib.parse import parse_qsl, urlencode

from patternbench.config import CacheAsideConfig, CollapsingConfig, PatternKind
from patternbench.http_client import UpstreamTimeout
from patternbench.proxy import Middleware, NextHandler, ProxyRequest, ProxyResponse

CACHE_CAPACITY = 1024
#: upper bound a follower waits for its leader before giving up
FOLLOWER_WAIT_S = 60.0


@dataclass(frozen=True)
class CollapseKey:
    method: str
    path: str
    sorted_query: str


def collapse_key(request: ProxyRequest) -> CollapseKey:
    """Method + normalized path + sorted query; headers deliberately excluded."""
    pairs = sorted(parse_qsl(request.query, keep_blank_values=True))
    path = request.path or "/"
    while "//" in path:
        path = path.replace("//", "/")
    if len(path) > 1 and path.endswith("/"):
        path = path.rstrip("/")
    return CollapseKey(request.method.upper(), path, urlencode(pairs))


def _annotated(response: ProxyResponse, extra: dict[str, str]) -> ProxyResponse:
    headers = dict(response.headers)
    headers.update(extra)
    return ProxyResponse(response.status, headers, response.body,
                         response.upstream_latency_us)


# ---------------------------------------------------------------------------
# request collapsing


@dataclass
class _Flight:
    """One collapse group: the leader's pending upstream call plus its waiters."""

    done: threading.Event = field(default_factory=threading.Event)
    response: Optional[ProxyResponse] = None
    error: Optional[BaseException] = None
    waiters: int = 0
    leader_started_at: float = 0.0


@dataclass
class _Batch:
    """Accumulates distinct ids during the collapse window (id-batch mode)."""

    deadline: float
    ids: set[str] = field(default_factory=set)
    done: threading.Event = field(default_factory=threading.Event)
    by_id: dict[str, bytes] = field(default_factory=dict)
    status: int = 200
    error: Optional[BaseException] = None


class RequestCollapsingMiddleware(Middleware):
    kind = PatternKind.REQUEST_COLLAPSING

    def __init__(self, config: CollapsingConfig):
        self.config = config
        self._lock = threading.Lock()
        self._flights: dict[CollapseKey, _Flight] = {}
        self._batch: Optional[_Batch] = None
        self.upstream_groups = 0  # collapse groups that actually hit the upstream

    def _applies(self, request: ProxyRequest) -> bool:
        return request.method.upper() == "GET" and request.path.startswith(
            self.config.endpoint_path)

    def handle(self, request: ProxyRequest, call_next: NextHandler) -> ProxyResponse:
        if not self._applies(request):
            return call_next(request)
        if self.config.id_field:
            batch_id = self._request_id(request)
            if batch_id is not None:
                return self._handle_batched(batch_id, request, call_next)
        return self.collapse(request, call_next)

    # -- plain single-flight --------------------------------------------------

    def collapse(self, request: ProxyRequest, call_next: NextHandler) -> ProxyResponse:
        key = collapse_key(request)
        with self._lock:
            flight = self._flights.get(key)
            if flight is None:
                flight = _Flight(leader_started_at=time.monotonic())
                self._flights[key] = flight
                is_leader = True
            else:
                flight.waiters += 1
                is_leader = False
        if is_leader:
            try:
                flight.response = call_next(request)
            except BaseException as exc:
                flight.error = exc
            finally:
                with self._lock:
                    self._flights.pop(key, None)
                    self.upstream_groups += 1
                flight.done.set()
            role = "leader"
        else:
            if not flight.done.wait(FOLLOWER_WAIT_S):
                raise UpstreamTimeout("collapse leader did not finish in time")
            role = "follower"
        if flight.error is not None:
            raise flight.error
        assert flight.response is not None
        return _annotated(flight.response,
                          {"x-pattern": "request-collapsing", "x-collapse": role})

    # -- id batching ------------------------------------------------------------

    def _request_id(self, request: ProxyRequest) -> Optional[str]:
        param = self.config.query_parameter or self.config.id_field
        for name, value in parse_qsl(request.query, keep_blank_values=True):
            if name == param:
                return value
        return None

    def _handle_batched(self, batch_id: str, request: ProxyRequest,
                        call_next: NextHandler) -> ProxyResponse:
        window = self.config.collapse_window_s
        with self._lock:
            batch = self._batch
            if batch is None or batch.done.is_set() or time.monotonic() >= batch.deadline:
                batch = _Batch(deadline=time.monotonic() + window)
                self._batch = batch
                is_leader = True
            else:
                is_leader = False
            batch.ids.add(batch_id)
        if is_leader:
            self._run_batch(batch, request, call_next)
        elif not batch.done.wait(FOLLOWER_WAIT_S):
            raise UpstreamTimeout("batch leader did not finish in time")
        if batch.error is not None:
            raise batch.error
        body = batch.by_id.get(batch_id, b"[]")
        return ProxyResponse(batch.status,
                             {"content-type": "application/json",
                              "x-pattern": "request-collapsing"},
                             body)

    def _run_batch(self, batch: _Batch, request: ProxyRequest,
                   call_next: NextHandler) -> None:
        time.sleep(max(0.0, batch.deadline - time.monotonic()))
        with self._lock:
            if self._batch is batch:
                self._batch = None  # later arrivals start a new window
            ids = sorted(batch.ids)
        param = self.config.query_parameter or self.config.id_field or "id"
        merged = ProxyRequest(
            method="GET",
            path=self.config.batch_query,
            query=urlencode({param: ",".join(ids)}),
            headers=dict(request.headers),
            body=b"",
            received_at=request.received_at,
        )
        try:
            response = call_next(merged)
            batch.status = response.status
            if response.status == 200:
                self._demultiplex(batch, response.body)
        except BaseException as exc:
            batch.error = exc
        finally:
            with self._lock:
                self.upstream_groups += 1
            batch.done.set()

    def _demultiplex(self, batch: _Batch, body: bytes) -> None:
        id_field = self.config.id_field or "id"
        try:
            records = json.loads(body)
        except ValueError as exc:
            batch.error = UpstreamTimeout(f"batch response is not JSON: {exc}")
            return
        grouped: dict[str, list] = {}
        if isinstance(records, list):
            for record in records:
                if isinstance(record, dict):
                    grouped.setdefault(str(record.get(id_field)), []).append(record)
        for wanted in batch.ids:
            rows = grouped.get(wanted, [])
            batch.by_id[wanted] = json.dumps(
                rows, sort_keys=True, separators=(",", ":")).encode("utf-8")


# ---------------------------------------------------------------------------
# cache-aside


@dataclass
class CacheEntry:
    key: CollapseKey
    status: int
    headers: dict[str, str]
    body: bytes
    stored_at: float


class CacheAsideMiddleware(Middleware):
    kind = PatternKind.CACHE_ASIDE

    def __init__(self, config: CacheAsideConfig, capacity: int = CACHE_CAPACITY,
                 clock: Callable[[], float] = time.monotonic):
        self.config = config
        self.capacity = capacity
        self._clock = clock
        self._lock = threading.Lock()
        self._entries: "OrderedDict[CollapseKey, CacheEntry]" = OrderedDict()
        # max_connections bounds concurrent miss fetches; excess misses wait
        self._miss_slots = threading.BoundedSemaphore(config.max_connections)
        self.hits = 0
        self.misses = 0

    def _applies(self, request: ProxyRequest) -> bool:
        return request.method.upper() == "GET" and any(
            request.path.startswith(prefix) for prefix in self.config.cached_endpoints)

    def handle(self, request: ProxyRequest, call_next: NextHandler) -> ProxyResponse:
        if not self._applies(request):
            return call_next(request)
        response, _hit = self.lookup_or_fetch(request, call_next, self._clock())
        return response

    def lookup_or_fetch(self, request: ProxyRequest, call_next: NextHandler,
                        now: float) -> tuple[ProxyResponse, bool]:
        """Serve a fresh entry without upstream contact, else fetch and store on 200."""
        key = collapse_key(request)
        with self._lock:
            entry = self._entries.get(key)
            if entry is not None:
                age = now - entry.stored_at
                if age < self.config.ttl_s:
                    self._entries.move_to_end(key)
                    self.hits += 1
                    response = ProxyResponse(entry.status, dict(entry.headers), entry.body)
                    response.headers["x-cache"] = "hit"
                    response.headers["x-cache-age-ms"] = str(int(age * 1000))
                    return response, True
                del self._entries[key]
        with self._miss_slots:
            response = call_next(request)
        with self._lock:
            self.misses += 1
            if response.status == 200:
                self._entries[key] = CacheEntry(key, response.status,
                                                dict(response.headers), response.body,
                                                self._clock())
                self._entries.move_to_end(key)
                while len(self._entries) > self.capacity:
                    self._entries.popitem(last=False)
        return _annotated(response, {"x-cache": "miss"}), False

    def evict(self, now: Optional[float] = None) -> int:
        """Drop stale entries and trim the LRU overflow; returns removed count."""
        now = self._clock() if now is None else now
        removed = 0
        with self._lock:
            stale = [key for key, entry in self._entries.items()
                     if now - entry.stored_at >= self.config.ttl_s]
            for key in stale:
                del self._entries[key]
                removed += 1
            while len(self._entries) > self.capacity:
                self._entries.popitem(last=False)
                removed += 1
        return removed

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)
