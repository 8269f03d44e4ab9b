"""Asynchronous request-reply middleware: 202-accept, background execution
through the rest of the chain, status polling, expiry reaping."""

from __future__ import annotations

import enum
import json
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

from patternbench.config import AsyncReplyConfig, PatternKind
from patternbench.http_client import UpstreamConnectError, UpstreamTimeout
from patternbench.proxy import Middleware, NextHandler, ProxyRequest, ProxyResponse

JOB_CAPACITY = 10_000
_WORKERS = 16


class JobStatus(enum.Enum):
    PENDING = "pending"
    RUNNING = "running"
    DONE = "done"
    FAILED = "failed"


@dataclass
class Job:
    id: str
    submitted_at: float
    expires_at: float
    status: JobStatus = JobStatus.PENDING
    response: Optional[ProxyResponse] = None
    lock: threading.Lock = field(default_factory=threading.Lock)

    def settle(self, status: JobStatus, response: ProxyResponse) -> None:
        with self.lock:
            if self.status in (JobStatus.DONE, JobStatus.FAILED):
                return  # terminal states never change
            self.status = status
            self.response = response


class AsyncReplyMiddleware(Middleware):
    kind = PatternKind.ASYNC_REQUEST_REPLY

    def __init__(self, config: AsyncReplyConfig, capacity: int = JOB_CAPACITY,
                 clock: Callable[[], float] = time.time):
        self.config = config
        self.capacity = capacity
        self._clock = clock
        self._lock = threading.Lock()
        self._jobs: dict[str, Job] = {}
        self._pool = ThreadPoolExecutor(max_workers=_WORKERS,
                                        thread_name_prefix="async-reply")

    def close(self) -> None:
        self._pool.shutdown(wait=False, cancel_futures=True)

    def handle(self, request: ProxyRequest, call_next: NextHandler) -> ProxyResponse:
        prefix = self.config.poll_path_prefix
        if request.method.upper() == "GET" and request.path.startswith(prefix + "/"):
            return self.poll(request.path[len(prefix) + 1:])
        if request.path == self.config.endpoint_path:
            return self.submit(request, call_next)
        return call_next(request)

    def submit(self, request: ProxyRequest, call_next: NextHandler) -> ProxyResponse:
        """Accept immediately (202 + Location) and run the original request in
        the background through the remainder of the chain."""
        now = self._clock()
        self.reap_expired(now)
        job = Job(id=uuid.uuid4().hex, submitted_at=now,
                  expires_at=now + self.config.job_retention_s)
        with self._lock:
            unresolved = sum(1 for j in self._jobs.values()
                             if j.status in (JobStatus.PENDING, JobStatus.RUNNING))
            if unresolved >= self.capacity:
                return ProxyResponse(429, {"content-type": "application/json",
                                           "x-pattern": "async-request-reply"},
                                     b'{"error":"job store full"}')
            self._jobs[job.id] = job
        # detach from the handler's request object before the handler returns
        background = ProxyRequest(request.method, request.path, request.query,
                                  dict(request.headers), request.body,
                                  request.received_at)
        self._pool.submit(self._execute, job, background, call_next)
        location = f"{self.config.poll_path_prefix}/{job.id}"
        body = json.dumps({"id": job.id, "status": job.status.value,
                           "location": location}).encode()
        return ProxyResponse(202, {"content-type": "application/json",
                                   "location": location,
                                   "x-pattern": "async-request-reply"}, body)

    def _execute(self, job: Job, request: ProxyRequest, call_next: NextHandler) -> None:
        with job.lock:
            if job.status is not JobStatus.PENDING:
                return
            job.status = JobStatus.RUNNING
        try:
            response = call_next(request)
        except UpstreamTimeout as exc:
            job.settle(JobStatus.FAILED, ProxyResponse(
                504, {"content-type": "text/plain"}, str(exc).encode()))
            return
        except UpstreamConnectError as exc:
            job.settle(JobStatus.FAILED, ProxyResponse(
                502, {"content-type": "text/plain"}, str(exc).encode()))
            return
        except Exception as exc:  # noqa: BLE001 - background thread must not die silently
            job.settle(JobStatus.FAILED, ProxyResponse(
                500, {"content-type": "text/plain"},
                f"background execution failed: {exc}".encode()))
            return
        job.settle(JobStatus.DONE, response)

    def poll(self, job_id: str) -> ProxyResponse:
        """Pending/Running poll as 202 + Retry-After; Done/Failed replay the
        stored response, idempotently, until the job expires."""
        self.reap_expired(self._clock())
        with self._lock:
            job = self._jobs.get(job_id)
        if job is None:
            return ProxyResponse(404, {"content-type": "application/json"},
                                 b'{"error":"unknown or expired job"}')
        with job.lock:
            status = job.status
            stored = job.response
        if status in (JobStatus.PENDING, JobStatus.RUNNING):
            body = json.dumps({"id": job_id, "status": status.value}).encode()
            return ProxyResponse(202, {"content-type": "application/json",
                                       "retry-after": "1",
                                       "x-pattern": "async-request-reply"}, body)
        assert stored is not None
        return ProxyResponse(stored.status, dict(stored.headers), stored.body,
                             stored.upstream_latency_us)

    def reap_expired(self, now: Optional[float] = None) -> int:
        now = self._clock() if now is None else now
        with self._lock:
            expired = [job_id for job_id, job in self._jobs.items()
                       if job.expires_at <= now]
            for job_id in expired:
                del self._jobs[job_id]
        return len(expired)

    def job_count(self) -> int:
        with self._lock:
            return len(self._jobs)
