"""The system under test: six HTTP services over the synthetic dataset.

Each service burns a configured amount of busy-loop CPU per 1000 records so
the energy proxy has real signal, measures its own thread-CPU delta per
request, and supports gzip response compression when the caller asks for it
(that is the work gateway offloading later pulls out of the services).
"""

from __future__ import annotations

import gzip
import json
import random
import threading
import time
from dataclasses import dataclass
from urllib.parse import parse_qsl

from patternbench.config import PipelineTopology, ServiceSpec, StageKind
from patternbench.http_client import follow_async_reply, http_call
from patternbench.httpbase import BodyTooLarge, QuietHandler, QuietHTTPServer, serve_in_thread
from patternbench.metrics import EnergyRegistry, burn_cpu_ms
from patternbench.proxy import PortInUseError
from patternbench.testbed.dataset import Dataset
from patternbench.testbed.stages import StageError, apply_stage, to_json_bytes

_GZIP_MIN_BYTES = 64
STAGE_CALL_TIMEOUT_S = 30.0
ASYNC_POLL_INTERVAL_S = 0.03


@dataclass
class ServiceResponse:
    status: int
    headers: dict[str, str]
    body: bytes


class ServiceRuntime:
    """Request handling for one testbed service, independent of HTTP plumbing."""

    def __init__(self, spec: ServiceSpec, topology: PipelineTopology, dataset: Dataset,
                 registry: EnergyRegistry, public_ports: dict[str, int]):
        self.spec = spec
        self.topology = topology
        self.dataset = dataset
        self.registry = registry
        # name -> port the rest of the world (and in-pipeline hops) must dial;
        # filled in by the deployment once the proxy is listening
        self.public_ports = public_ports
        self.account = registry.account(spec.name)
        self.calls = 0
        self._fail_lock = threading.Lock()
        self._failed_so_far = 0
        self._rng = random.Random(f"{spec.name}-faults")
        self._dataset_json = to_json_bytes(dataset.as_dicts())

    # -- scripted faults ----------------------------------------------------

    def _scripted_failure(self) -> ServiceResponse | None:
        mode = self.spec.failure_mode
        if mode is None:
            return None
        if mode.kind == "always_timeout":
            time.sleep(mode.sleep_s)
            return ServiceResponse(500, {"content-type": "text/plain"},
                                   b"scripted timeout elapsed")
        if mode.kind == "fail_first_n":
            with self._fail_lock:
                if self._failed_so_far < mode.n:
                    self._failed_so_far += 1
                    trip = True
                else:
                    trip = False
        else:  # fail_rate
            trip = self._rng.random() < mode.rate
        if trip:
            return ServiceResponse(500, {"content-type": "text/plain"},
                                   b"scripted failure")
        return None

    # -- request handling ----------------------------------------------------

    def handle(self, method: str, path: str, query: str,
               headers: dict[str, str], body: bytes) -> ServiceResponse:
        if path == "/health":
            return ServiceResponse(200, {"content-type": "text/plain"}, b"ok")
        self.calls += 1
        kind = self.spec.stage_kind
        if kind is StageKind.DATA_PRODUCT:
            return self._serve_data(method, path)
        if kind is StageKind.COORDINATOR:
            return self._serve_pipeline(method, path, headers)
        return self._serve_stage(method, path, query, body)

    def _burn_for(self, record_count: int) -> None:
        burn_cpu_ms(self.spec.work_cost_ms * record_count / 1000.0)

    def _serve_data(self, method: str, path: str) -> ServiceResponse:
        if method != "GET" or path != self.spec.endpoint:
            return ServiceResponse(404, {"content-type": "text/plain"}, b"not found")
        failed = self._scripted_failure()
        self._burn_for(len(self.dataset.records))
        if failed is not None:
            return failed
        return ServiceResponse(200, {"content-type": "application/json"},
                               self._dataset_json)

    def _serve_stage(self, method: str, path: str, query: str,
                     body: bytes) -> ServiceResponse:
        if method != "POST" or path != self.spec.endpoint:
            return ServiceResponse(404, {"content-type": "text/plain"}, b"not found")
        try:
            payload = json.loads(body) if body else []
        except ValueError:
            return ServiceResponse(400, {"content-type": "text/plain"},
                                   b"request body is not JSON")
        record_count = len(payload) if isinstance(payload, list) else 1
        failed = self._scripted_failure()
        self._burn_for(record_count)
        if failed is not None:
            return failed
        params = dict(parse_qsl(query, keep_blank_values=True))
        try:
            result = apply_stage(self.spec.stage_kind, payload, params)
        except StageError as exc:
            return ServiceResponse(exc.status, {"content-type": "text/plain"},
                                   str(exc).encode())
        if self.spec.stage_kind is StageKind.FORMATTING:
            out_body, content_type = result
            return ServiceResponse(200, {"content-type": content_type}, out_body)
        return ServiceResponse(200, {"content-type": "application/json"},
                               to_json_bytes(result))

    def _serve_pipeline(self, method: str, path: str,
                        headers: dict[str, str]) -> ServiceResponse:
        if method != "GET" or not path.startswith("/pipeline/"):
            return ServiceResponse(404, {"content-type": "text/plain"}, b"not found")
        pipeline_id = path[len("/pipeline/"):]
        pipeline = next((p for p in self.topology.pipelines
                         if p.pipeline_id == pipeline_id), None)
        if pipeline is None:
            return ServiceResponse(404, {"content-type": "text/plain"},
                                   f"unknown pipeline {pipeline_id!r}".encode())
        failed = self._scripted_failure()
        burn_cpu_ms(self.spec.work_cost_ms)  # flat orchestration cost per request
        if failed is not None:
            return failed
        return self.coordinator_execute(pipeline, headers)

    def coordinator_execute(self, pipeline, request_headers: dict[str, str]) -> ServiceResponse:
        """Fetch the data product, then invoke each stage over HTTP in order.

        Stage hops dial public ports so injected patterns intercept them; a 202
        from an async-reply injection is polled transparently.
        """
        data_product = next(svc for svc in self.topology.services
                            if svc.stage_kind is StageKind.DATA_PRODUCT)
        hop_headers = {
            "Accept-Encoding": "identity",
            "x-api-key": request_headers.get("x-api-key", ""),
        }
        try:
            port = self.public_ports[data_product.name]
            response = http_call("GET", "127.0.0.1", port, data_product.endpoint,
                                 headers=hop_headers, timeout=STAGE_CALL_TIMEOUT_S)
            response = follow_async_reply(response, "127.0.0.1", port,
                                          poll_interval=ASYNC_POLL_INTERVAL_S,
                                          deadline_s=STAGE_CALL_TIMEOUT_S,
                                          headers=hop_headers)
        except Exception as exc:  # noqa: BLE001 - stage errors map to 502
            return ServiceResponse(502, {"content-type": "text/plain",
                                         "x-pipeline-error": data_product.name},
                                   f"data product fetch failed: {exc}".encode())
        if response.status != 200:
            return ServiceResponse(response.status,
                                   {"content-type": response.header("content-type", "text/plain"),
                                    "x-pipeline-error": data_product.name},
                                   response.body)
        payload = response.body
        content_type = "application/json"
        for stage_name in pipeline.stages:
            stage = self.topology.service(stage_name)
            port = self.public_ports[stage_name]
            try:
                response = http_call(
                    "POST", "127.0.0.1", port, stage.endpoint,
                    headers={**hop_headers, "Content-Type": "application/json"},
                    body=payload, timeout=STAGE_CALL_TIMEOUT_S)
                response = follow_async_reply(response, "127.0.0.1", port,
                                              poll_interval=ASYNC_POLL_INTERVAL_S,
                                              deadline_s=STAGE_CALL_TIMEOUT_S,
                                              headers=hop_headers)
            except Exception as exc:  # noqa: BLE001
                return ServiceResponse(502, {"content-type": "text/plain",
                                             "x-pipeline-error": stage_name},
                                       f"stage {stage_name} failed: {exc}".encode())
            if response.status != 200:
                return ServiceResponse(response.status,
                                       {"content-type": response.header("content-type",
                                                                        "text/plain"),
                                        "x-pipeline-error": stage_name},
                                       response.body)
            payload = response.body
            content_type = response.header("content-type", content_type)
        return ServiceResponse(200, {"content-type": content_type}, payload)


class _ServiceHTTPServer(QuietHTTPServer):
    runtime: ServiceRuntime


class _ServiceHandler(QuietHandler):
    def _serve(self) -> None:
        runtime: ServiceRuntime = self.server.runtime  # type: ignore[attr-defined]
        path, query = self.split_target()
        try:
            body = self.read_body()
        except BodyTooLarge:
            self.write_response(413, {"content-type": "text/plain"}, b"body too large")
            return
        headers = self.lower_headers()
        with runtime.registry.measure(runtime.spec.name):
            result = runtime.handle(self.command, path, query, headers, body)
            out_body = result.body
            out_headers = dict(result.headers)
            # only the pipeline edge compresses; inner hops stay identity so
            # keyed-response patterns on them never see encoding variants
            if (runtime.spec.stage_kind is StageKind.COORDINATOR
                    and result.status == 200 and len(out_body) >= _GZIP_MIN_BYTES
                    and "gzip" in headers.get("accept-encoding", "").lower()
                    and "content-encoding" not in out_headers):
                out_body = gzip.compress(out_body, compresslevel=6, mtime=0)
                out_headers["content-encoding"] = "gzip"
        self.write_response(result.status, out_headers, out_body)

    do_GET = do_POST = do_PUT = do_DELETE = _serve


@dataclass
class ServiceHandle:
    spec: ServiceSpec
    runtime: ServiceRuntime
    server: _ServiceHTTPServer
    thread: threading.Thread
    port: int

    def stop(self) -> None:
        self.server.shutdown()
        self.server.server_close()


def start_service(spec: ServiceSpec, topology: PipelineTopology, dataset: Dataset,
                  registry: EnergyRegistry, public_ports: dict[str, int],
                  bind_port: int) -> ServiceHandle:
    runtime = ServiceRuntime(spec, topology, dataset, registry, public_ports)
    try:
        server = _ServiceHTTPServer(("127.0.0.1", bind_port), _ServiceHandler)
    except OSError as exc:
        raise PortInUseError(bind_port) from exc
    server.runtime = runtime
    port = server.server_address[1]
    thread = serve_in_thread(server, f"svc:{spec.name}:{port}")
    return ServiceHandle(spec=spec, runtime=runtime, server=server, thread=thread, port=port)
