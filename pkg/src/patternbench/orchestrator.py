"""End-to-end workflow: deploy the testbed behind the proxy, inject patterns,
run the workload matrix, collect results, tear down.

Every service's public port is served by the proxy; the real service listens
on a shifted (or ephemeral) backend port. Baseline traffic therefore crosses
the same empty-chain proxy hop as pattern traffic, keeping the before/after
energy comparison honest.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Optional

from patternbench.config import (
    DEFAULT_API_KEYS,
    CacheAsideConfig,
    ExperimentConfig,
    PatternInjection,
    PatternKind,
    WorkloadLevel,
)
from patternbench.http_client import UpstreamConnectError, UpstreamTimeout, http_call
from patternbench.httpbase import QuietHandler, QuietHTTPServer, serve_in_thread
from patternbench.metrics import (
    EnergyRegistry,
    PipelineStats,
    RunCollector,
    RunResult,
    export_csv,
)
from patternbench.proxy import PortInUseError, ProxyEngine, RouteBinding, start_proxy
from patternbench.testbed.dataset import generate_dataset
from patternbench.testbed.services import ServiceHandle, start_service
from patternbench.workload import run_workload

logger = logging.getLogger(__name__)

BACKEND_PORT_OFFSET = 10000
HEALTH_TIMEOUT_S = 10.0

#: headers every generated request carries; the api key satisfies the gateway's
#: auth offload and gzip lets compression work shift between tiers
WORKLOAD_HEADERS = {"x-api-key": DEFAULT_API_KEYS[0], "Accept-Encoding": "gzip"}

ZERO_STATS = PipelineStats(0, 0, 0, 0, 0, 0.0)


class DeployError(RuntimeError):
    pass


@dataclass
class Deployment:
    config: ExperimentConfig
    registry: EnergyRegistry
    services: dict[str, ServiceHandle]
    proxy: ProxyEngine
    public_ports: dict[str, int]

    def pipeline_targets(self) -> list[str]:
        coordinator = next(svc for svc in self.config.topology.services
                           if svc.stage_kind.value == "coordinator")
        port = self.public_ports[coordinator.name]
        return [f"http://127.0.0.1:{port}/pipeline/{pipe.pipeline_id}"
                for pipe in self.config.topology.pipelines]

    def health(self) -> dict[str, bool]:
        status = {}
        for name, port in self.public_ports.items():
            try:
                response = http_call("GET", "127.0.0.1", port, "/health", timeout=2.0)
                status[name] = response.status == 200
            except (UpstreamTimeout, UpstreamConnectError):
                status[name] = False
        return status

    def installed_patterns(self) -> list[dict[str, str]]:
        installed = []
        for binding in self.proxy.bindings:
            for middleware in binding.chain:
                installed.append({"kind": middleware.kind.value,
                                  "service": binding.service_name})
        return installed

    def stop(self) -> None:
        self.proxy.stop()
        for handle in self.services.values():
            handle.stop()


def deploy(config: ExperimentConfig, *, ephemeral: bool = False,
           backend_port_offset: int = BACKEND_PORT_OFFSET,
           joules_per_cpu_second: float = 1.0,
           health_timeout_s: float = HEALTH_TIMEOUT_S) -> Deployment:
    """Start backends and the fronting proxy; returns once everything is healthy.

    ``ephemeral`` assigns every port dynamically (test isolation); otherwise the
    configured public ports are used and backends shift by ``backend_port_offset``.
    """
    config.validate()
    registry = EnergyRegistry(joules_per_cpu_second)
    dataset = generate_dataset(config.dataset.seed, config.dataset.size)
    public_ports: dict[str, int] = {}

    services: dict[str, ServiceHandle] = {}
    bindings: list[RouteBinding] = []
    proxy: Optional[ProxyEngine] = None
    try:
        for spec in config.topology.services:
            bind_port = 0 if ephemeral else spec.port + backend_port_offset
            handle = start_service(spec, config.topology, dataset, registry,
                                   public_ports, bind_port)
            services[spec.name] = handle
            bindings.append(RouteBinding(
                service_name=spec.name,
                listen_port=0 if ephemeral else spec.port,
                path_prefix="/",
                upstream=("127.0.0.1", handle.port),
            ))
        proxy = start_proxy(bindings)
        for binding in bindings:
            public_ports[binding.service_name] = binding.listen_port
        _await_health(public_ports, health_timeout_s)
    except Exception:
        if proxy is not None:
            proxy.stop()
        for handle in services.values():
            handle.stop()
        raise
    return Deployment(config=config, registry=registry, services=services,
                      proxy=proxy, public_ports=public_ports)


def _await_health(public_ports: dict[str, int], timeout_s: float) -> None:
    deadline = time.monotonic() + timeout_s
    for name, port in public_ports.items():
        while True:
            try:
                if http_call("GET", "127.0.0.1", port, "/health", timeout=1.0).status == 200:
                    break
            except (UpstreamTimeout, UpstreamConnectError):
                pass
            if time.monotonic() > deadline:
                raise DeployError(f"service {name} on port {port} failed its health check")
            time.sleep(0.05)


def scale_injection(injection: PatternInjection, scale: float) -> PatternInjection:
    """Scaling shrinks the cache TTL with the run so duration/TTL stays fixed."""
    if scale == 1.0 or injection.kind is not PatternKind.CACHE_ASIDE:
        return injection
    config = injection.config
    assert isinstance(config, CacheAsideConfig)
    return PatternInjection(injection.kind, replace(config, ttl_s=config.ttl_s * scale))


@dataclass
class ExperimentOptions:
    patterns: Optional[list[PatternKind]] = None  # None = every configured kind
    levels: Optional[list[WorkloadLevel]] = None  # None = every configured level
    scale: float = 1.0
    seed: Optional[int] = None
    out_csv: Optional[str] = None
    ephemeral: bool = False
    request_timeout_s: float = 30.0
    trace_interval_s: float = 1.0
    extra_headers: dict[str, str] = field(default_factory=dict)


def failed_run(run_id: str, pattern: str, workload: str) -> RunResult:
    return RunResult(run_id=run_id, pattern=pattern, workload=workload,
                     pipelines={}, services={}, total=ZERO_STATS,
                     total_cpu_seconds=0.0, total_energy_proxy=0.0, failed=True)


def run_experiment(config: ExperimentConfig,
                   options: ExperimentOptions) -> tuple[list[RunResult], Optional[str]]:
    """Run {baseline union selected patterns} x {selected levels}, sequentially.

    Each pattern cell injects fresh middleware and removes it afterwards, so no
    breaker/cache/job state leaks between cells. Cell failures are recorded as
    errored runs and the matrix continues.
    """
    if options.seed is not None:
        config = replace(config, dataset=replace(config.dataset, seed=options.seed))
    if options.patterns is None:
        kinds = [kind for kind in PatternKind if config.injections_of(kind)]
    else:
        kinds = list(options.patterns)
    levels = options.levels or [profile.level for profile in config.workloads]

    cells: list[tuple[str, tuple[PatternInjection, ...]]] = [("baseline", ())]
    cells += [(kind.value, config.injections_of(kind)) for kind in kinds]

    deployment = deploy(config, ephemeral=options.ephemeral)
    results: list[RunResult] = []
    headers = dict(WORKLOAD_HEADERS)
    headers.update(options.extra_headers)
    try:
        for label, injections in cells:
            scaled = [scale_injection(inj, options.scale) for inj in injections]
            for level in levels:
                profile = config.workload(level).scaled(options.scale)
                run_id = f"{label}-{level.value}"
                installed: list[PatternInjection] = []
                try:
                    for injection in scaled:
                        deployment.proxy.inject(injection)
                        installed.append(injection)
                    collector = RunCollector(run_id, label, level.value,
                                             deployment.registry)
                    summary = run_workload(
                        profile, deployment.pipeline_targets(), collector,
                        headers=headers, pattern_label=label, run_id=run_id,
                        trace_interval_s=options.trace_interval_s,
                        request_timeout_s=options.request_timeout_s)
                    results.append(collector.finalize(summary.duration_s))
                    logger.info("run %s: %d requests, %.3f cpu-s energy window",
                                run_id, summary.total_requests,
                                results[-1].total_cpu_seconds)
                except Exception:
                    logger.exception("run %s failed; matrix continues", run_id)
                    results.append(failed_run(run_id, label, level.value))
                finally:
                    for injection in installed:
                        try:
                            deployment.proxy.remove(injection.kind,
                                                    injection.target_service)
                        except Exception:
                            logger.exception("removing %s after run %s failed",
                                             injection.kind.value, run_id)
    finally:
        deployment.stop()

    csv_path = None
    if options.out_csv:
        csv_path = export_csv(results, options.out_csv)
    return results, csv_path


# ---------------------------------------------------------------------------
# admin endpoint: lets `inject`, `remove`, `status` and `destroy` work against
# a deployment started by `deploy` in another process


class _AdminHTTPServer(QuietHTTPServer):
    deployment: Deployment
    shutdown_event: threading.Event


class _AdminHandler(QuietHandler):
    def _deployment(self) -> Deployment:
        return self.server.deployment  # type: ignore[attr-defined]

    def _json(self, status: int, payload: dict) -> None:
        self.write_response(status, {"content-type": "application/json"},
                            json.dumps(payload, sort_keys=True).encode())

    def do_GET(self) -> None:
        path, _ = self.split_target()
        deployment = self._deployment()
        if path == "/status":
            self._json(200, {
                "services": {name: {"healthy": ok, "port": deployment.public_ports[name]}
                             for name, ok in deployment.health().items()},
                "patterns": deployment.installed_patterns(),
            })
        elif path == "/energy":
            snap = deployment.registry.snapshot()
            coeff = deployment.registry.joules_per_cpu_second
            self._json(200, {name: {"cpu_seconds": cpu, "energy_proxy": cpu * coeff}
                             for name, cpu in snap.items()})
        else:
            self._json(404, {"error": "unknown admin path"})

    def do_POST(self) -> None:
        from patternbench.config import parse_pattern_node

        path, _ = self.split_target()
        deployment = self._deployment()
        try:
            body = json.loads(self.read_body() or b"{}")
        except ValueError:
            self._json(400, {"error": "body is not JSON"})
            return
        if path == "/inject":
            try:
                injection = parse_pattern_node(body)
                deployment.proxy.inject(injection)
            except Exception as exc:  # noqa: BLE001 - reported to the client
                self._json(409 if "duplicate" in str(exc) else 400, {"error": str(exc)})
                return
            self._json(200, {"injected": injection.kind.value,
                             "service": injection.target_service})
        elif path == "/remove":
            try:
                kind = PatternKind(str(body.get("kind")))
                deployment.proxy.remove(kind, str(body.get("service")))
            except Exception as exc:  # noqa: BLE001
                self._json(404, {"error": str(exc)})
                return
            self._json(200, {"removed": body.get("kind"), "service": body.get("service")})
        elif path == "/shutdown":
            self._json(200, {"stopping": True})
            self.server.shutdown_event.set()  # type: ignore[attr-defined]
        else:
            self._json(404, {"error": "unknown admin path"})


@dataclass
class AdminServer:
    deployment: Deployment
    port: int
    server: _AdminHTTPServer
    shutdown_event: threading.Event

    def stop(self) -> None:
        self.server.shutdown()
        self.server.server_close()


def start_admin(deployment: Deployment, port: int) -> AdminServer:
    try:
        server = _AdminHTTPServer(("127.0.0.1", port), _AdminHandler)
    except OSError as exc:
        raise PortInUseError(port) from exc
    event = threading.Event()
    server.deployment = deployment
    server.shutdown_event = event
    serve_in_thread(server, f"admin:{server.server_address[1]}")
    return AdminServer(deployment=deployment, port=server.server_address[1],
                       server=server, shutdown_event=event)
