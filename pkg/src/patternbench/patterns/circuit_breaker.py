"""Circuit breaker middleware: admission limits, bounded retries, fail-fast.

Admission enforces three concurrent-work limits (connections, pending queue,
in-flight upstream requests). The trip criterion is a consecutive-failure
threshold: once tripped the breaker answers 503 without upstream contact until
the open period lapses, then lets a single half-open probe decide recovery.
"""

from __future__ import annotations

import enum
import threading
import time
from dataclasses import dataclass
from typing import Callable, Optional, Union

from patternbench.config import CircuitBreakerConfig, PatternKind
from patternbench.http_client import UpstreamConnectError, UpstreamTimeout
from patternbench.proxy import Middleware, NextHandler, ProxyRequest, ProxyResponse


class Mode(enum.Enum):
    CLOSED = "closed"
    OPEN = "open"
    HALF_OPEN = "half_open"


class RejectReason(enum.Enum):
    BREAKER_OPEN = "breaker-open"
    CONNECTION_OVERFLOW = "connection-overflow"
    PENDING_OVERFLOW = "pending-overflow"
    PENDING_TIMEOUT = "pending-timeout"


@dataclass(frozen=True)
class Admitted:
    probe: bool = False


@dataclass(frozen=True)
class Queued:
    pass


@dataclass(frozen=True)
class Rejected:
    reason: RejectReason


Decision = Union[Admitted, Queued, Rejected]


@dataclass
class StateSnapshot:
    mode: Mode
    open_until: float
    active_connections: int
    pending: int
    in_flight_requests: int
    consecutive_failures: int


class BreakerState:
    """Admission counters plus the closed/open/half-open state machine.

    All transitions are linearizable under one condition variable; counters can
    never exceed the configured limits by construction, and `_check` asserts it.
    """

    def __init__(self, config: CircuitBreakerConfig):
        self._config = config
        self._cond = threading.Condition()
        self.mode = Mode.CLOSED
        self.open_until = 0.0
        self.active_connections = 0
        self.pending = 0
        self.in_flight_requests = 0
        self.consecutive_failures = 0

    def _check(self) -> None:
        assert self.active_connections <= self._config.max_connections
        assert self.pending <= self._config.max_pending
        assert self.in_flight_requests <= self._config.max_requests
        assert self.active_connections >= self.pending + self.in_flight_requests >= 0

    def snapshot(self) -> StateSnapshot:
        with self._cond:
            self._check()
            return StateSnapshot(self.mode, self.open_until, self.active_connections,
                                 self.pending, self.in_flight_requests,
                                 self.consecutive_failures)

    def admit(self, config: CircuitBreakerConfig, now: float) -> Decision:
        """One admission step. Admitted/Queued take a counter slot; Rejected
        leaves every counter unchanged."""
        with self._cond:
            if self.mode is Mode.OPEN:
                if now < self.open_until:
                    return Rejected(RejectReason.BREAKER_OPEN)
                if (self.in_flight_requests >= config.max_requests
                        or self.active_connections >= config.max_connections):
                    # a pre-trip request is still draining; probe on a later arrival
                    return Rejected(RejectReason.BREAKER_OPEN)
                # open period lapsed: single probe allowed
                self.mode = Mode.HALF_OPEN
                self.active_connections += 1
                self.in_flight_requests += 1
                self._check()
                return Admitted(probe=True)
            if self.mode is Mode.HALF_OPEN:
                return Rejected(RejectReason.BREAKER_OPEN)
            if self.active_connections >= config.max_connections:
                return Rejected(RejectReason.CONNECTION_OVERFLOW)
            if self.in_flight_requests < config.max_requests:
                self.active_connections += 1
                self.in_flight_requests += 1
                self._check()
                return Admitted()
            if self.pending < config.max_pending:
                self.active_connections += 1
                self.pending += 1
                self._check()
                return Queued()
            return Rejected(RejectReason.PENDING_OVERFLOW)

    def await_slot(self, timeout: float) -> Decision:
        """Block a Queued request until an in-flight slot frees, the breaker
        leaves Closed, or the wait times out."""
        deadline = time.monotonic() + timeout
        with self._cond:
            while True:
                if self.mode is not Mode.CLOSED:
                    self.pending -= 1
                    self.active_connections -= 1
                    self._cond.notify_all()
                    return Rejected(RejectReason.BREAKER_OPEN)
                if self.in_flight_requests < self._config.max_requests:
                    self.pending -= 1
                    self.in_flight_requests += 1
                    self._check()
                    return Admitted()
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    self.pending -= 1
                    self.active_connections -= 1
                    self._cond.notify_all()
                    return Rejected(RejectReason.PENDING_TIMEOUT)
                self._cond.wait(remaining)

    def record_outcome(self, outcome: str, config: CircuitBreakerConfig, now: float) -> None:
        """Feed the state machine one completed-request outcome ("success"/"failure")."""
        with self._cond:
            if outcome == "success":
                self.consecutive_failures = 0
                if self.mode is Mode.HALF_OPEN:
                    self.mode = Mode.CLOSED
                    self._cond.notify_all()
                return
            if self.mode is Mode.HALF_OPEN:
                self.mode = Mode.OPEN
                self.open_until = now + config.open_duration_s
                self._cond.notify_all()
                return
            self.consecutive_failures += 1
            if self.mode is Mode.CLOSED and self.consecutive_failures >= config.failure_threshold:
                self.mode = Mode.OPEN
                self.open_until = now + config.open_duration_s
                self._cond.notify_all()

    def release(self) -> None:
        """Return an in-flight slot once the admitted request fully completes."""
        with self._cond:
            self.in_flight_requests -= 1
            self.active_connections -= 1
            self._check()
            self._cond.notify_all()


def _reject_response(reason: RejectReason) -> ProxyResponse:
    return ProxyResponse(
        503,
        {"content-type": "text/plain", "x-pattern": "circuit-breaker",
         "x-breaker-reason": reason.value},
        f"circuit breaker rejected request: {reason.value}".encode(),
    )


class CircuitBreakerMiddleware(Middleware):
    kind = PatternKind.CIRCUIT_BREAKER

    def __init__(self, config: CircuitBreakerConfig,
                 clock: Callable[[], float] = time.monotonic):
        self.config = config
        self.state = BreakerState(config)
        self._clock = clock

    def handle(self, request: ProxyRequest, call_next: NextHandler) -> ProxyResponse:
        decision = self.state.admit(self.config, self._clock())
        if isinstance(decision, Rejected):
            return _reject_response(decision.reason)
        if isinstance(decision, Queued):
            decision = self.state.await_slot(self.config.timeout_s)
            if isinstance(decision, Rejected):
                return _reject_response(decision.reason)
        success = False
        try:
            response = self.call_with_retries(request, call_next)
            success = response.status < 500
        finally:
            self.state.record_outcome("success" if success else "failure",
                                      self.config, self._clock())
            self.state.release()
        return response

    def call_with_retries(self, request: ProxyRequest, call_next: NextHandler) -> ProxyResponse:
        """Up to 1 + retries attempts, each bounded by the configured timeout.

        First success (any status < 500) wins; exhausted attempts map to 504
        when the last failure was a timeout, 502 otherwise.
        """
        attempts = 1 + self.config.retries
        last_failure: Optional[str] = None
        last_response: Optional[ProxyResponse] = None
        for _ in range(attempts):
            request.meta["upstream_timeout"] = self.config.timeout_s
            try:
                response = call_next(request)
            except UpstreamTimeout:
                last_failure = "timeout"
                continue
            except UpstreamConnectError:
                last_failure = "connect"
                continue
            if response.status >= 500:
                last_failure = "upstream-5xx"
                last_response = response
                continue
            return response
        status = 504 if last_failure == "timeout" else 502
        detail = f"upstream failed after {attempts} attempts ({last_failure})"
        if last_response is not None:
            detail += f"; last status {last_response.status}"
        return ProxyResponse(
            status,
            {"content-type": "text/plain", "x-pattern": "circuit-breaker",
             "x-breaker-reason": "attempts-exhausted"},
            detail.encode(),
        )


def admit(state: BreakerState, config: CircuitBreakerConfig, now: float) -> Decision:
    return state.admit(config, now)


def record_outcome(state: BreakerState, outcome: str, config: CircuitBreakerConfig,
                   now: Optional[float] = None) -> BreakerState:
    state.record_outcome(outcome, config, time.monotonic() if now is None else now)
    return state
