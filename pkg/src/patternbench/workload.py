"""Closed-loop stepped-ramp workload generator.

Virtual users are real threads issuing one request at a time (closed loop);
the pool starts at one increment and grows by one increment every step
interval: u(t) = increment * (1 + floor(t / step_interval)). Completed
requests emit one MetricSample each into the provided sink.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from urllib.parse import urlsplit

from patternbench.config import WorkloadProfile
from patternbench.http_client import UpstreamConnectError, UpstreamTimeout, http_call
from patternbench.metrics import CONNECT_ERROR_STATUS, MetricSample, RunCollector

_TICK_S = 0.02


@dataclass(frozen=True)
class _Target:
    host: str
    port: int
    path: str
    pipeline_id: str


def _parse_target(url: str) -> _Target:
    parts = urlsplit(url)
    path = parts.path or "/"
    if parts.query:
        path = f"{path}?{parts.query}"
    marker = "/pipeline/"
    pipeline_id = path[path.index(marker) + len(marker):] if marker in path else path
    return _Target(parts.hostname or "127.0.0.1", parts.port or 80, path, pipeline_id)


@dataclass
class RunSummary:
    run_id: str
    started_at: float
    duration_s: float
    total_requests: int
    error_requests: int
    trace: list[tuple[float, int]] = field(default_factory=list)
    peak_users: int = 0


class _VirtualUser(threading.Thread):
    """One closed-loop user bound to one pipeline endpoint."""

    def __init__(self, index: int, target: _Target, profile: WorkloadProfile,
                 stop: threading.Event, end_at: float, emit, headers: dict[str, str],
                 request_timeout_s: float):
        super().__init__(name=f"vu-{index}", daemon=True)
        self.index = index
        self.target = target
        self.profile = profile
        self.stop_event = stop
        self.end_at = end_at
        self.emit = emit
        self.headers = dict(headers)
        self.headers["x-user-id"] = str(index)
        self.request_timeout_s = request_timeout_s
        self.requests = 0
        self.errors = 0

    def run(self) -> None:
        while not self.stop_event.is_set() and time.monotonic() < self.end_at:
            issued = time.monotonic()
            status = CONNECT_ERROR_STATUS
            response_bytes = 0
            cache_flag = "none"
            try:
                response = http_call("GET", self.target.host, self.target.port,
                                     self.target.path, headers=self.headers,
                                     timeout=self.request_timeout_s)
                status = response.status
                response_bytes = len(response.body)
                cache_flag = response.header("x-cache", "none") or "none"
            except (UpstreamTimeout, UpstreamConnectError):
                pass  # connect-error sentinel sample; the run continues
            latency_us = int((time.monotonic() - issued) * 1e6)
            self.requests += 1
            if status == CONNECT_ERROR_STATUS or status >= 400:
                self.errors += 1
            self.emit(self.target.pipeline_id, status, latency_us, response_bytes,
                      cache_flag)
            if self.profile.think_time_s > 0:
                self.stop_event.wait(self.profile.think_time_s)


def run_workload(
    profile: WorkloadProfile,
    targets: list[str],
    sink: RunCollector | None = None,
    headers: dict[str, str] | None = None,
    pattern_label: str = "baseline",
    run_id: str = "",
    trace_interval_s: float = 1.0,
    request_timeout_s: float = 30.0,
) -> RunSummary:
    """Drive the stepped schedule against the targets until the duration lapses.

    Users are assigned round-robin across the target endpoints at spawn time.
    Unreachable targets produce connect-error samples; the run keeps going.
    """
    if not targets:
        raise ValueError(">=1 target required")
    parsed = [_parse_target(url) for url in targets]
    started_wall = time.time()
    if profile.duration_s <= 0:
        return RunSummary(run_id, started_wall, 0.0, 0, 0)

    stop = threading.Event()
    start = time.monotonic()
    end_at = start + profile.duration_s

    def emit(pipeline_id: str, status: int, latency_us: int, response_bytes: int,
             cache_flag: str) -> None:
        if sink is not None:
            sink.record(MetricSample(
                timestamp=time.time(), run_id=run_id, pipeline_id=pipeline_id,
                status=status, latency_us=latency_us, request_bytes=0,
                response_bytes=response_bytes, cache_flag=cache_flag,
                pattern_label=pattern_label))

    users: list[_VirtualUser] = []
    trace: list[tuple[float, int]] = []
    next_sample = trace_interval_s
    base_headers = headers or {}
    while True:
        elapsed = time.monotonic() - start
        if elapsed >= profile.duration_s:
            break
        wanted = profile.users_at(elapsed)
        while len(users) < wanted:
            user = _VirtualUser(len(users), parsed[len(users) % len(parsed)], profile,
                                stop, end_at, emit, base_headers, request_timeout_s)
            users.append(user)
            user.start()
        if elapsed >= next_sample:
            trace.append((round(elapsed, 3), sum(1 for u in users if u.is_alive())))
            next_sample += trace_interval_s
        time.sleep(_TICK_S)

    stop.set()
    deadline = time.monotonic() + request_timeout_s + 5.0
    for user in users:
        user.join(timeout=max(0.1, deadline - time.monotonic()))
    duration = time.monotonic() - start
    return RunSummary(
        run_id=run_id,
        started_at=started_wall,
        duration_s=min(duration, profile.duration_s),
        total_requests=sum(u.requests for u in users),
        error_requests=sum(u.errors for u in users),
        trace=trace,
        peak_users=len(users),
    )


def concurrency_trace(summary: RunSummary) -> list[tuple[float, int]]:
    """Per-second (elapsed, active users) samples recorded during the run."""
    return list(summary.trace)


def plateau_values(trace: list[tuple[float, int]], step_interval_s: float,
                   boundary_margin_s: float = 0.5) -> dict[int, list[int]]:
    """Group trace samples by schedule step, dropping boundary-adjacent ones."""
    plateaus: dict[int, list[int]] = {}
    for t, users in trace:
        step = int(t // step_interval_s)
        offset = t - step * step_interval_s
        if offset < boundary_margin_s or offset > step_interval_s - boundary_margin_s:
            continue
        plateaus.setdefault(step, []).append(users)
    return plateaus
