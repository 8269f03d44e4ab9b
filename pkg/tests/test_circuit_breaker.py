import random
import threading
import time

from conftest import StubBackend, proxy_for
from patternbench.config import CircuitBreakerConfig, PatternInjection, PatternKind
from patternbench.http_client import http_call
from patternbench.patterns.circuit_breaker import (
    Admitted,
    BreakerState,
    Mode,
    Queued,
    Rejected,
    RejectReason,
    admit,
    record_outcome,
)

REFERENCE_CONFIG = CircuitBreakerConfig(
    service="filter-service", route="/", port=8081, max_connections=100,
    max_pending=20, max_requests=1, retries=2, timeout_s=1.0)


def quick_config(**overrides):
    values = dict(service="stub-service", route="/", port=0, max_connections=100,
                  max_pending=20, max_requests=1, retries=2, timeout_s=0.25,
                  failure_threshold=5, open_duration_s=0.3)
    values.update(overrides)
    return CircuitBreakerConfig(**values)


def injected_proxy(backend, config):
    engine = proxy_for(backend)
    engine.inject(PatternInjection(PatternKind.CIRCUIT_BREAKER, config))
    middleware = engine.bindings[0].chain[0]
    return engine, middleware, engine.bindings[0].listen_port


# -- admission unit behavior ---------------------------------------------------


def test_admit_queues_when_in_flight_full():
    state = BreakerState(REFERENCE_CONFIG)
    assert isinstance(admit(state, REFERENCE_CONFIG, now=0.0), Admitted)
    decision = admit(state, REFERENCE_CONFIG, now=0.0)
    assert isinstance(decision, Queued)
    snap = state.snapshot()
    assert snap.in_flight_requests == 1
    assert snap.pending == 1


def test_admit_rejects_on_pending_overflow():
    state = BreakerState(REFERENCE_CONFIG)
    admit(state, REFERENCE_CONFIG, 0.0)
    for _ in range(REFERENCE_CONFIG.max_pending):
        assert isinstance(admit(state, REFERENCE_CONFIG, 0.0), Queued)
    decision = admit(state, REFERENCE_CONFIG, 0.0)
    assert decision == Rejected(RejectReason.PENDING_OVERFLOW)
    snap = state.snapshot()
    assert snap.pending == REFERENCE_CONFIG.max_pending
    assert snap.active_connections == 1 + REFERENCE_CONFIG.max_pending


def test_admit_rejects_while_open():
    state = BreakerState(REFERENCE_CONFIG)
    state.mode = Mode.OPEN
    state.open_until = 100.0
    assert admit(state, REFERENCE_CONFIG, now=50.0) == Rejected(RejectReason.BREAKER_OPEN)
    snap = state.snapshot()
    assert (snap.active_connections, snap.pending, snap.in_flight_requests) == (0, 0, 0)


def test_open_lapse_admits_single_probe():
    state = BreakerState(REFERENCE_CONFIG)
    state.mode = Mode.OPEN
    state.open_until = 10.0
    decision = admit(state, REFERENCE_CONFIG, now=10.0)
    assert decision == Admitted(probe=True)
    assert state.snapshot().mode is Mode.HALF_OPEN
    assert admit(state, REFERENCE_CONFIG, now=10.0) == Rejected(RejectReason.BREAKER_OPEN)


def test_connection_overflow():
    config = quick_config(max_connections=2, max_pending=20, max_requests=2)
    state = BreakerState(config)
    assert isinstance(admit(state, config, 0.0), Admitted)
    assert isinstance(admit(state, config, 0.0), Admitted)
    assert admit(state, config, 0.0) == Rejected(RejectReason.CONNECTION_OVERFLOW)


# -- state machine ----------------------------------------------------------------


def test_five_consecutive_failures_trip_open():
    state = BreakerState(REFERENCE_CONFIG)
    for i in range(5):
        assert state.snapshot().mode is Mode.CLOSED, f"tripped early at {i}"
        admit(state, REFERENCE_CONFIG, 0.0)
        record_outcome(state, "failure", REFERENCE_CONFIG, now=float(i))
        state.release()
    snap = state.snapshot()
    assert snap.mode is Mode.OPEN
    assert snap.open_until == 4.0 + REFERENCE_CONFIG.open_duration_s


def test_success_resets_consecutive_failures():
    state = BreakerState(REFERENCE_CONFIG)
    for _ in range(3):
        admit(state, REFERENCE_CONFIG, 0.0)
        record_outcome(state, "failure", REFERENCE_CONFIG, 0.0)
        state.release()
    assert state.snapshot().consecutive_failures == 3
    admit(state, REFERENCE_CONFIG, 0.0)
    record_outcome(state, "success", REFERENCE_CONFIG, 0.0)
    state.release()
    assert state.snapshot().consecutive_failures == 0


def test_half_open_probe_success_closes():
    state = BreakerState(REFERENCE_CONFIG)
    state.mode = Mode.HALF_OPEN
    record_outcome(state, "success", REFERENCE_CONFIG, 0.0)
    assert state.snapshot().mode is Mode.CLOSED


def test_half_open_probe_failure_reopens():
    state = BreakerState(REFERENCE_CONFIG)
    state.mode = Mode.HALF_OPEN
    record_outcome(state, "failure", REFERENCE_CONFIG, now=7.0)
    snap = state.snapshot()
    assert snap.mode is Mode.OPEN
    assert snap.open_until == 7.0 + REFERENCE_CONFIG.open_duration_s


def test_queued_request_gets_slot_after_release():
    state = BreakerState(REFERENCE_CONFIG)
    admit(state, REFERENCE_CONFIG, 0.0)
    assert isinstance(admit(state, REFERENCE_CONFIG, 0.0), Queued)
    results = []

    def waiter():
        results.append(state.await_slot(timeout=2.0))

    thread = threading.Thread(target=waiter)
    thread.start()
    time.sleep(0.05)
    state.release()
    thread.join(timeout=2.0)
    assert results and isinstance(results[0], Admitted)


def test_queued_request_times_out():
    state = BreakerState(REFERENCE_CONFIG)
    admit(state, REFERENCE_CONFIG, 0.0)
    assert isinstance(admit(state, REFERENCE_CONFIG, 0.0), Queued)
    started = time.monotonic()
    decision = state.await_slot(timeout=0.2)
    assert decision == Rejected(RejectReason.PENDING_TIMEOUT)
    assert 0.15 < time.monotonic() - started < 0.6
    assert state.snapshot().pending == 0


# -- retries through the proxy -----------------------------------------------------


def test_fail_once_then_succeed_uses_two_attempts():
    attempts = []

    def script(method, path, query, headers, body):
        attempts.append(1)
        if len(attempts) == 1:
            return 500, {}, b"boom"
        return 200, {"content-type": "text/plain"}, b"recovered"

    with StubBackend(script=script) as backend:
        engine, _, port = injected_proxy(backend, quick_config())
        try:
            response = http_call("GET", "127.0.0.1", port, "/")
            assert response.status == 200
            assert response.body == b"recovered"
            assert backend.calls == 2
        finally:
            engine.stop()


def test_healthy_backend_single_attempt():
    with StubBackend() as backend:
        engine, _, port = injected_proxy(backend, quick_config())
        try:
            assert http_call("GET", "127.0.0.1", port, "/").status == 200
            assert backend.calls == 1
        finally:
            engine.stop()


def test_timeout_exhaustion_is_504_after_all_attempts():
    config = quick_config(timeout_s=0.3, retries=2)
    with StubBackend(delay_s=2.0) as backend:
        engine, _, port = injected_proxy(backend, config)
        try:
            started = time.monotonic()
            response = http_call("GET", "127.0.0.1", port, "/", timeout=10.0)
            elapsed = time.monotonic() - started
            assert response.status == 504
            assert response.header("x-pattern") == "circuit-breaker"
            assert 0.9 - 0.2 < elapsed < 0.9 + 0.5  # 3 attempts x 0.3s
            assert backend.calls == 3
        finally:
            engine.stop()


def test_4xx_passes_through_as_success():
    with StubBackend(script=lambda *a: (404, {}, b"missing")) as backend:
        engine, middleware, port = injected_proxy(backend, quick_config())
        try:
            response = http_call("GET", "127.0.0.1", port, "/")
            assert response.status == 404
            assert backend.calls == 1  # not retried
            assert middleware.state.snapshot().consecutive_failures == 0
        finally:
            engine.stop()


def test_retry_bound_holds_for_random_failure_scripts():
    rng = random.Random(42)

    def script(method, path, query, headers, body):
        if rng.random() < 0.6:
            return 500, {}, b"flaky"
        return 200, {}, b"ok"

    config = quick_config(failure_threshold=10_000)  # keep it closed throughout
    with StubBackend(script=script) as backend:
        engine, _, port = injected_proxy(backend, config)
        try:
            for _ in range(40):
                before = backend.calls
                http_call("GET", "127.0.0.1", port, "/")
                assert backend.calls - before <= 1 + config.retries
        finally:
            engine.stop()


def test_open_breaker_fails_fast_with_zero_backend_calls():
    config = quick_config(open_duration_s=60.0)
    with StubBackend(script=lambda *a: (500, {}, b"down")) as backend:
        engine, middleware, port = injected_proxy(backend, config)
        try:
            for _ in range(config.failure_threshold):
                http_call("GET", "127.0.0.1", port, "/")
            assert middleware.state.snapshot().mode is Mode.OPEN
            calls_at_trip = backend.calls
            for _ in range(10):
                started = time.monotonic()
                response = http_call("GET", "127.0.0.1", port, "/")
                assert response.status == 503
                assert response.header("x-breaker-reason") == "breaker-open"
                assert time.monotonic() - started < 0.010
            assert backend.calls == calls_at_trip
        finally:
            engine.stop()


def test_recovery_within_one_probe():
    healthy = threading.Event()

    def script(method, path, query, headers, body):
        if healthy.is_set():
            return 200, {}, b"ok"
        return 500, {}, b"down"

    config = quick_config(open_duration_s=0.3)
    with StubBackend(script=script) as backend:
        engine, middleware, port = injected_proxy(backend, config)
        try:
            for _ in range(config.failure_threshold):
                http_call("GET", "127.0.0.1", port, "/")
            assert middleware.state.snapshot().mode is Mode.OPEN
            healthy.set()
            time.sleep(config.open_duration_s + 0.05)
            response = http_call("GET", "127.0.0.1", port, "/")
            assert response.status == 200
            assert middleware.state.snapshot().mode is Mode.CLOSED
        finally:
            engine.stop()


def test_counters_never_exceed_limits_under_concurrency():
    config = quick_config(max_connections=10, max_pending=4, max_requests=2,
                          failure_threshold=10_000)
    state = BreakerState(config)
    stop = threading.Event()
    errors = []

    def driver(seed):
        rng = random.Random(seed)
        while not stop.is_set():
            decision = state.admit(config, time.monotonic())
            if isinstance(decision, Queued):
                decision = state.await_slot(timeout=0.02)
            if isinstance(decision, Admitted):
                time.sleep(rng.random() * 0.003)
                state.record_outcome("success" if rng.random() > 0.3 else "failure",
                                     config, time.monotonic())
                state.release()

    def monitor():
        while not stop.is_set():
            try:
                snap = state.snapshot()  # snapshot asserts the invariants
                assert snap.active_connections <= config.max_connections
                assert snap.pending <= config.max_pending
                assert snap.in_flight_requests <= config.max_requests
            except AssertionError as exc:
                errors.append(exc)
                stop.set()
            time.sleep(0.0005)

    threads = [threading.Thread(target=driver, args=(i,)) for i in range(24)]
    threads.append(threading.Thread(target=monitor))
    for thread in threads:
        thread.start()
    time.sleep(2.0)
    stop.set()
    for thread in threads:
        thread.join(timeout=5.0)
    assert not errors
