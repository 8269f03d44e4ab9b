"""Per-request metrics, the CPU-time energy proxy, run aggregation and CSV export.

Energy is accounted as thread-CPU seconds consumed while serving requests,
scaled by a configurable joules-per-cpu-second coefficient (default 1.0, unit
"cpu-joule"). Absolute wattage is out of scope; before/after comparisons are
the methodology.
"""

from __future__ import annotations

import csv
import json
import math
import socket
import threading
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass
from typing import Iterable, Optional

#: MetricSample.status value for requests that never produced an HTTP response
CONNECT_ERROR_STATUS = 0

CSV_COLUMNS = (
    "run_id", "pattern", "workload", "pipeline", "service", "requests", "errors",
    "p50_us", "p95_us", "p99_us", "throughput_rps", "cpu_seconds", "energy_proxy",
    "row_kind",
)


@dataclass(frozen=True)
class MetricSample:
    timestamp: float
    run_id: str
    pipeline_id: str
    status: int
    latency_us: int
    request_bytes: int
    response_bytes: int
    cache_flag: str = "none"  # hit | miss | none
    pattern_label: str = "baseline"

    def __post_init__(self):
        if self.latency_us < 0:
            raise ValueError("latency >= 0 required")
        if self.status != CONNECT_ERROR_STATUS and not (100 <= self.status <= 599):
            raise ValueError(f"status must be an HTTP code or {CONNECT_ERROR_STATUS}")

    @property
    def is_error(self) -> bool:
        return self.status == CONNECT_ERROR_STATUS or self.status >= 400


class EnergyAccount:
    """Cumulative thread-CPU seconds one service consumed serving requests."""

    def __init__(self, service: str, joules_per_cpu_second: float = 1.0):
        self.service = service
        self.joules_per_cpu_second = joules_per_cpu_second
        self._cpu_ns = 0
        self._lock = threading.Lock()

    def add_cpu_ns(self, delta_ns: int) -> None:
        if delta_ns <= 0:
            return
        with self._lock:
            self._cpu_ns += delta_ns

    @property
    def cpu_seconds(self) -> float:
        with self._lock:
            return self._cpu_ns / 1e9

    @property
    def energy_proxy(self) -> float:
        return self.cpu_seconds * self.joules_per_cpu_second


class EnergyRegistry:
    """All per-service accounts for one deployment.

    Uses per-thread CPU clocks when the platform offers them; otherwise falls
    back to process CPU time and flags the degraded source via clock_source.
    """

    def __init__(self, joules_per_cpu_second: float = 1.0):
        self.joules_per_cpu_second = joules_per_cpu_second
        self._accounts: dict[str, EnergyAccount] = {}
        self._lock = threading.Lock()
        self.clock_source = "thread" if hasattr(time, "thread_time_ns") else "process-fallback"

    def account(self, service: str) -> EnergyAccount:
        with self._lock:
            acct = self._accounts.get(service)
            if acct is None:
                acct = EnergyAccount(service, self.joules_per_cpu_second)
                self._accounts[service] = acct
            return acct

    def services(self) -> list[str]:
        with self._lock:
            return sorted(self._accounts)

    def measure_service_cpu(self, service: str) -> float:
        return self.account(service).cpu_seconds

    def snapshot(self) -> dict[str, float]:
        with self._lock:
            accounts = list(self._accounts.values())
        return {acct.service: acct.cpu_seconds for acct in accounts}

    @contextmanager
    def measure(self, service: str):
        """Attribute the enclosed block's thread-CPU time to the service."""
        acct = self.account(service)
        if self.clock_source == "thread":
            start = time.thread_time_ns()
            try:
                yield
            finally:
                acct.add_cpu_ns(time.thread_time_ns() - start)
        else:
            start = time.process_time_ns()
            try:
                yield
            finally:
                acct.add_cpu_ns(time.process_time_ns() - start)


def burn_cpu_ms(ms: float) -> None:
    """Busy-loop exactly ``ms`` milliseconds of this thread's CPU time."""
    if ms <= 0:
        return
    budget = int(ms * 1e6)
    start = time.thread_time_ns()
    while time.thread_time_ns() - start < budget:
        pass


def percentile_us(sorted_latencies: list[int], q: float) -> int:
    """Exact nearest-rank percentile over pre-sorted data."""
    if not sorted_latencies:
        return 0
    rank = max(1, math.ceil(q / 100.0 * len(sorted_latencies)))
    return sorted_latencies[rank - 1]


@dataclass(frozen=True)
class PipelineStats:
    requests: int
    errors: int
    p50_us: int
    p95_us: int
    p99_us: int
    throughput_rps: float

    @property
    def error_rate(self) -> float:
        return self.errors / self.requests if self.requests else 0.0


@dataclass(frozen=True)
class ServiceEnergy:
    service: str
    cpu_seconds: float
    energy_proxy: float


@dataclass(frozen=True)
class RunResult:
    run_id: str
    pattern: str
    workload: str
    pipelines: dict[str, PipelineStats]
    services: dict[str, ServiceEnergy]
    total: PipelineStats
    total_cpu_seconds: float
    total_energy_proxy: float
    failed: bool = False

    def service_energy(self, service: str) -> float:
        return self.services[service].energy_proxy


class LiveSampleStream:
    """Line-delimited JSON sample broadcast on a local TCP socket.

    Off by default; wire one into a RunCollector to feed external dashboards.
    Slow or disconnected consumers are dropped, never back-pressure the run.
    """

    def __init__(self, port: int = 0):
        self._server = socket.create_server(("127.0.0.1", port))
        self.port = self._server.getsockname()[1]
        self._clients: list[socket.socket] = []
        self._lock = threading.Lock()
        self._closed = False
        self._acceptor = threading.Thread(target=self._accept_loop,
                                          name=f"live-samples:{self.port}", daemon=True)
        self._acceptor.start()

    def _accept_loop(self) -> None:
        while not self._closed:
            try:
                client, _ = self._server.accept()
            except OSError:
                return
            with self._lock:
                self._clients.append(client)

    def publish(self, sample: MetricSample) -> None:
        line = (json.dumps(asdict(sample), sort_keys=True) + "\n").encode()
        with self._lock:
            alive = []
            for client in self._clients:
                try:
                    client.sendall(line)
                    alive.append(client)
                except OSError:
                    client.close()
            self._clients = alive

    def close(self) -> None:
        self._closed = True
        self._server.close()
        with self._lock:
            for client in self._clients:
                client.close()
            self._clients.clear()


class RunCollector:
    """Accepts concurrent sample emissions for one run; finalize aggregates."""

    def __init__(self, run_id: str, pattern: str, workload: str,
                 registry: Optional[EnergyRegistry] = None,
                 live_stream: Optional[LiveSampleStream] = None):
        self.run_id = run_id
        self.pattern = pattern
        self.workload = workload
        self._registry = registry
        self._live = live_stream
        self._samples: list[MetricSample] = []
        self._lock = threading.Lock()
        self._start_energy = registry.snapshot() if registry else {}
        self._finalized = False

    def record(self, sample: MetricSample) -> None:
        with self._lock:
            if self._finalized:
                return  # stragglers after the run quiesced are dropped
            self._samples.append(sample)
        if self._live is not None:
            self._live.publish(sample)

    def sample_count(self) -> int:
        with self._lock:
            return len(self._samples)

    def samples(self) -> list[MetricSample]:
        with self._lock:
            return list(self._samples)

    def finalize(self, duration_s: float) -> RunResult:
        with self._lock:
            self._finalized = True
            samples = list(self._samples)
        end_energy = self._registry.snapshot() if self._registry else {}
        services = {}
        coeff = self._registry.joules_per_cpu_second if self._registry else 1.0
        for name in sorted(set(self._start_energy) | set(end_energy)):
            cpu = max(0.0, end_energy.get(name, 0.0) - self._start_energy.get(name, 0.0))
            services[name] = ServiceEnergy(name, cpu, cpu * coeff)

        by_pipeline: dict[str, list[MetricSample]] = {}
        for sample in samples:
            by_pipeline.setdefault(sample.pipeline_id, []).append(sample)
        pipelines = {
            pid: _aggregate(group, duration_s)
            for pid, group in sorted(by_pipeline.items())
        }
        total_cpu = sum(se.cpu_seconds for se in services.values())
        return RunResult(
            run_id=self.run_id,
            pattern=self.pattern,
            workload=self.workload,
            pipelines=pipelines,
            services=services,
            total=_aggregate(samples, duration_s),
            total_cpu_seconds=total_cpu,
            total_energy_proxy=total_cpu * coeff,
        )


def _aggregate(samples: list[MetricSample], duration_s: float) -> PipelineStats:
    latencies = sorted(sample.latency_us for sample in samples)
    return PipelineStats(
        requests=len(samples),
        errors=sum(1 for sample in samples if sample.is_error),
        p50_us=percentile_us(latencies, 50),
        p95_us=percentile_us(latencies, 95),
        p99_us=percentile_us(latencies, 99),
        throughput_rps=(len(samples) / duration_s) if duration_s > 0 else 0.0,
    )


def finalize_run(collector: RunCollector, duration_s: float) -> RunResult:
    return collector.finalize(duration_s)


# ---------------------------------------------------------------------------
# CSV export / import (floats via repr for bit-exact round-trips)


def _stats_cells(stats: PipelineStats) -> list[str]:
    return [str(stats.requests), str(stats.errors), str(stats.p50_us),
            str(stats.p95_us), str(stats.p99_us), repr(stats.throughput_rps)]


def export_csv(results: Iterable[RunResult], path: str) -> str:
    """One row per (run, pipeline, service) plus one total row per run."""
    results = list(results)
    if not results:
        raise ValueError(">=1 result required")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for run in results:
            if run.failed:
                writer.writerow([run.run_id, run.pattern, run.workload, "", "",
                                 "0", "0", "0", "0", "0", repr(0.0), repr(0.0),
                                 repr(0.0), "error"])
                continue
            for pid, stats in run.pipelines.items():
                for name, se in run.services.items():
                    writer.writerow([run.run_id, run.pattern, run.workload, pid, name,
                                     *_stats_cells(stats), repr(se.cpu_seconds),
                                     repr(se.energy_proxy), "cell"])
            writer.writerow([run.run_id, run.pattern, run.workload, "", "",
                             *_stats_cells(run.total), repr(run.total_cpu_seconds),
                             repr(run.total_energy_proxy), "total"])
    return path


def parse_results_csv(path: str) -> list[RunResult]:
    """Inverse of export_csv; numeric fields reconstruct exactly."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV header {header!r}; want {list(CSV_COLUMNS)}")
        rows = [row for row in reader if row]

    order: list[str] = []
    partial: dict[str, dict] = {}
    for row in rows:
        record = dict(zip(CSV_COLUMNS, row))
        run_id = record["run_id"]
        if run_id not in partial:
            order.append(run_id)
            partial[run_id] = {"pattern": record["pattern"], "workload": record["workload"],
                               "pipelines": {}, "services": {}, "total": None,
                               "total_cpu": 0.0, "total_energy": 0.0, "failed": False}
        entry = partial[run_id]
        stats = PipelineStats(
            requests=int(record["requests"]), errors=int(record["errors"]),
            p50_us=int(record["p50_us"]), p95_us=int(record["p95_us"]),
            p99_us=int(record["p99_us"]), throughput_rps=float(record["throughput_rps"]),
        )
        if record["row_kind"] == "cell":
            entry["pipelines"].setdefault(record["pipeline"], stats)
            entry["services"].setdefault(record["service"], ServiceEnergy(
                record["service"], float(record["cpu_seconds"]),
                float(record["energy_proxy"])))
        elif record["row_kind"] == "total":
            entry["total"] = stats
            entry["total_cpu"] = float(record["cpu_seconds"])
            entry["total_energy"] = float(record["energy_proxy"])
        elif record["row_kind"] == "error":
            entry["failed"] = True
            entry["total"] = stats
        else:
            raise ValueError(f"unknown row_kind {record['row_kind']!r}")

    results = []
    for run_id in order:
        entry = partial[run_id]
        if entry["total"] is None:
            raise ValueError(f"run {run_id!r} has no total row")
        results.append(RunResult(
            run_id=run_id, pattern=entry["pattern"], workload=entry["workload"],
            pipelines=entry["pipelines"], services=entry["services"],
            total=entry["total"], total_cpu_seconds=entry["total_cpu"],
            total_energy_proxy=entry["total_energy"], failed=entry["failed"],
        ))
    return results
