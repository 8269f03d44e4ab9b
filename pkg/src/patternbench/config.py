"""Declarative experiment configuration: topology, pattern injections, workloads.

Everything here is immutable after parsing and safe to share across threads.
The document format is a YAML key/value tree with the sections ``dataset``,
``services``, ``pipelines``, ``patterns`` and ``workloads``; unknown keys are
rejected so typos fail loudly instead of silently changing an experiment.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Any, Optional

import yaml

DEFAULT_API_KEYS = ("pipeline-demo-key",)
DEFAULT_COLLAPSE_WINDOW_S = 0.025
DEFAULT_JOB_RETENTION_S = 120.0
DEFAULT_POLL_PREFIX = "/jobs"
DEFAULT_DATASET_SEED = 42
DEFAULT_DATASET_SIZE = 3000


class ConfigError(ValueError):
    """Raised for malformed documents and invariant violations.

    ``location`` carries "line:column" for syntax errors when the parser can
    attribute one.
    """

    def __init__(self, message: str, location: Optional[str] = None):
        super().__init__(message if location is None else f"{location}: {message}")
        self.location = location


class StageKind(enum.Enum):
    FILTER = "filter"
    AGGREGATION = "aggregation"
    ANONYMIZATION = "anonymization"
    FORMATTING = "formatting"
    COORDINATOR = "coordinator"
    DATA_PRODUCT = "data_product"


class PatternKind(enum.Enum):
    CIRCUIT_BREAKER = "circuit_breaker"
    ASYNC_REQUEST_REPLY = "async_request_reply"
    REQUEST_COLLAPSING = "request_collapsing"
    GATEWAY_OFFLOADING = "gateway_offloading"
    CACHE_ASIDE = "cache_aside"


class Concern(enum.Enum):
    COMPRESSION = "compression"
    AUTH_CHECK = "auth_check"
    ACCESS_LOGGING = "access_logging"


class WorkloadLevel(enum.Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


#: user-count step per workload level when no explicit increment is given
LEVEL_INCREMENTS = {WorkloadLevel.LOW: 10, WorkloadLevel.MEDIUM: 20, WorkloadLevel.HIGH: 40}


@dataclass(frozen=True)
class FailureMode:
    """Scripted fault for a testbed service.

    kinds: ``fail_first_n`` (first ``n`` requests return 500), ``always_timeout``
    (handler sleeps ``sleep_s`` so callers time out), ``fail_rate`` (each request
    fails with probability ``rate``; work is still burned first, so a failing
    stage wastes CPU exactly like a real broken service).
    """

    kind: str
    n: int = 0
    rate: float = 0.0
    sleep_s: float = 8.0

    KINDS = ("fail_first_n", "always_timeout", "fail_rate")

    def validate(self) -> None:
        if self.kind not in self.KINDS:
            raise ConfigError(f"failure_mode.kind must be one of {self.KINDS}, got {self.kind!r}")
        if self.kind == "fail_first_n" and self.n < 0:
            raise ConfigError("failure_mode: n >= 0 required")
        if self.kind == "fail_rate" and not (0.0 <= self.rate <= 1.0):
            raise ConfigError("failure_mode: rate in [0, 1] required")
        if self.kind == "always_timeout" and self.sleep_s <= 0:
            raise ConfigError("failure_mode: sleep_s > 0 required")


@dataclass(frozen=True)
class ServiceSpec:
    name: str
    port: int
    stage_kind: StageKind
    endpoint: str = "/"
    work_cost_ms: float = 8.0
    failure_mode: Optional[FailureMode] = None

    def validate(self) -> None:
        if not self.name:
            raise ConfigError("service: name nonempty required")
        _check_port(self.port, f"service {self.name}")
        if self.work_cost_ms < 0:
            raise ConfigError(f"service {self.name}: work_cost_ms >= 0 required")
        if not self.endpoint.startswith("/"):
            raise ConfigError(f"service {self.name}: endpoint must start with '/'")
        if self.failure_mode is not None:
            self.failure_mode.validate()


@dataclass(frozen=True)
class PipelineSpec:
    pipeline_id: str
    stages: tuple[str, ...]


@dataclass(frozen=True)
class PipelineTopology:
    services: tuple[ServiceSpec, ...]
    pipelines: tuple[PipelineSpec, ...]

    def service(self, name: str) -> ServiceSpec:
        for svc in self.services:
            if svc.name == name:
                return svc
        raise KeyError(name)

    def service_names(self) -> set[str]:
        return {svc.name for svc in self.services}

    def validate(self) -> None:
        for svc in self.services:
            svc.validate()
        ports = [svc.port for svc in self.services]
        if len(set(ports)) != len(ports):
            dupes = sorted({p for p in ports if ports.count(p) > 1})
            raise ConfigError(f"topology: port unique across services required (duplicated: {dupes})")
        if not self.pipelines:
            raise ConfigError("topology: >=1 pipeline required")
        names = self.service_names()
        stage_use: dict[str, int] = {}
        seen_ids: set[str] = set()
        for pipe in self.pipelines:
            if pipe.pipeline_id in seen_ids:
                raise ConfigError(f"topology: duplicate pipeline id {pipe.pipeline_id!r}")
            seen_ids.add(pipe.pipeline_id)
            if not pipe.stages:
                raise ConfigError(f"pipeline {pipe.pipeline_id}: each pipeline nonempty required")
            for stage in pipe.stages:
                if stage not in names:
                    raise ConfigError(
                        f"pipeline {pipe.pipeline_id}: stage {stage!r} does not resolve to a service"
                    )
                stage_use[stage] = stage_use.get(stage, 0) + 1
        if not any(count >= 2 for count in stage_use.values()):
            raise ConfigError("topology: at least one service must appear in >=2 pipelines (reuse)")


@dataclass(frozen=True)
class CircuitBreakerConfig:
    service: str
    route: str
    port: int
    max_connections: int
    max_pending: int
    max_requests: int
    retries: int
    timeout_s: float
    # trip criterion knobs; the admission thresholds alone never open the breaker
    failure_threshold: int = 5
    open_duration_s: float = 5.0

    def validate(self) -> None:
        if self.max_connections < 1:
            raise ConfigError("circuit_breaker: max_connections >= 1 required")
        if self.max_pending < 0:
            raise ConfigError("circuit_breaker: max_pending >= 0 required")
        if self.max_requests < 1:
            raise ConfigError("circuit_breaker: max_requests >= 1 required")
        if self.retries < 0:
            raise ConfigError("circuit_breaker: retries >= 0 required")
        if self.timeout_s <= 0:
            raise ConfigError("circuit_breaker: timeout > 0 required")
        if self.failure_threshold < 1:
            raise ConfigError("circuit_breaker: failure_threshold >= 1 required")
        if self.open_duration_s <= 0:
            raise ConfigError("circuit_breaker: open_duration > 0 required")
        _check_port(self.port, "circuit_breaker")


@dataclass(frozen=True)
class AsyncReplyConfig:
    service: str
    endpoint_path: str
    job_retention_s: float = DEFAULT_JOB_RETENTION_S
    poll_path_prefix: str = DEFAULT_POLL_PREFIX

    def validate(self) -> None:
        if not self.endpoint_path:
            raise ConfigError("async_request_reply: endpoint_path nonempty required")
        if self.job_retention_s <= 0:
            raise ConfigError("async_request_reply: job_retention > 0 required")
        if not self.poll_path_prefix.startswith("/"):
            raise ConfigError("async_request_reply: poll_path_prefix must start with '/'")


@dataclass(frozen=True)
class DbFields:
    host: Optional[str] = None
    port: Optional[int] = None
    name: Optional[str] = None
    username: Optional[str] = None
    password: Optional[str] = None


@dataclass(frozen=True)
class CollapsingConfig:
    backend_service: str
    backend_port: int
    endpoint_path: str
    batch_query: str
    query_parameter: Optional[str] = None
    id_field: Optional[str] = None
    db: Optional[DbFields] = None
    collapse_window_s: float = DEFAULT_COLLAPSE_WINDOW_S

    def validate(self) -> None:
        _check_port(self.backend_port, "request_collapsing")
        if not self.endpoint_path:
            raise ConfigError("request_collapsing: endpoint_path nonempty required")
        if self.collapse_window_s <= 0:
            raise ConfigError("request_collapsing: collapse_window > 0 required")


@dataclass(frozen=True)
class GatewayOffloadConfig:
    service_name: str
    service_port: int
    service_endpoint: str
    offloaded_concerns: frozenset[Concern] = frozenset(Concern)
    api_keys: tuple[str, ...] = DEFAULT_API_KEYS
    access_log_path: Optional[str] = None

    def validate(self) -> None:
        _check_port(self.service_port, "gateway_offloading")
        if not self.offloaded_concerns:
            raise ConfigError("gateway_offloading: nonempty offloaded_concerns required")
        if Concern.AUTH_CHECK in self.offloaded_concerns and not self.api_keys:
            raise ConfigError("gateway_offloading: api_keys required when auth_check enabled")


@dataclass(frozen=True)
class CacheAsideConfig:
    backend_service: str
    backend_port: int
    cached_endpoints: tuple[str, ...]
    ttl_s: float
    max_connections: int

    def validate(self) -> None:
        if self.ttl_s <= 0:
            raise ConfigError("cache_aside: ttl > 0 required")
        if self.max_connections < 1:
            raise ConfigError("cache_aside: max_connections >= 1 required")
        if not self.cached_endpoints:
            raise ConfigError("cache_aside: cached_endpoints nonempty required")
        _check_port(self.backend_port, "cache_aside")


PatternConfig = (
    CircuitBreakerConfig
    | AsyncReplyConfig
    | CollapsingConfig
    | GatewayOffloadConfig
    | CacheAsideConfig
)

_KIND_TO_CONFIG_TYPE = {
    PatternKind.CIRCUIT_BREAKER: CircuitBreakerConfig,
    PatternKind.ASYNC_REQUEST_REPLY: AsyncReplyConfig,
    PatternKind.REQUEST_COLLAPSING: CollapsingConfig,
    PatternKind.GATEWAY_OFFLOADING: GatewayOffloadConfig,
    PatternKind.CACHE_ASIDE: CacheAsideConfig,
}


@dataclass(frozen=True)
class PatternInjection:
    """One injectable pattern bound to its target service."""

    kind: PatternKind
    config: PatternConfig

    @property
    def target_service(self) -> str:
        if isinstance(self.config, CircuitBreakerConfig):
            return self.config.service
        if isinstance(self.config, AsyncReplyConfig):
            return self.config.service
        if isinstance(self.config, CollapsingConfig):
            return self.config.backend_service
        if isinstance(self.config, GatewayOffloadConfig):
            return self.config.service_name
        return self.config.backend_service

    def validate(self) -> None:
        expected = _KIND_TO_CONFIG_TYPE[self.kind]
        if type(self.config) is not expected:
            raise ConfigError(
                f"pattern {self.kind.value}: config type {type(self.config).__name__} "
                f"does not match kind (expected {expected.__name__})"
            )
        self.config.validate()


@dataclass(frozen=True)
class WorkloadProfile:
    level: WorkloadLevel
    step_interval_s: float = 30.0
    user_increment: int = 0  # 0 means "use the level default"
    duration_s: float = 300.0
    think_time_s: float = 0.1

    def __post_init__(self):
        if self.user_increment == 0:
            object.__setattr__(self, "user_increment", LEVEL_INCREMENTS[self.level])

    def validate(self) -> None:
        if self.step_interval_s <= 0:
            raise ConfigError("workload: step_interval > 0 required")
        if self.duration_s < self.step_interval_s and self.duration_s != 0:
            raise ConfigError("workload: duration >= step_interval required")
        if self.user_increment < 1:
            raise ConfigError("workload: user_increment >= 1 required")
        if self.think_time_s < 0:
            raise ConfigError("workload: think_time >= 0 required")

    def scaled(self, factor: float) -> "WorkloadProfile":
        """Shrink step interval and duration proportionally for desk-scale runs."""
        if factor <= 0:
            raise ConfigError("scale factor > 0 required")
        return replace(
            self,
            step_interval_s=self.step_interval_s * factor,
            duration_s=self.duration_s * factor,
        )

    def users_at(self, t: float) -> int:
        """Scheduled active-user count at elapsed time t (starts at one increment)."""
        if t < 0 or t >= self.duration_s:
            return 0
        return self.user_increment * (1 + int(t // self.step_interval_s))


@dataclass(frozen=True)
class DatasetConfig:
    seed: int = DEFAULT_DATASET_SEED
    size: int = DEFAULT_DATASET_SIZE

    def validate(self) -> None:
        if self.size < 0:
            raise ConfigError("dataset: size >= 0 required")


@dataclass(frozen=True)
class ExperimentConfig:
    topology: PipelineTopology
    injections: tuple[PatternInjection, ...]
    workloads: tuple[WorkloadProfile, ...]
    dataset: DatasetConfig = DatasetConfig()

    def validate(self) -> None:
        self.topology.validate()
        self.dataset.validate()
        names = self.topology.service_names()
        for inj in self.injections:
            inj.validate()
            if inj.target_service not in names:
                raise ConfigError(
                    f"pattern {inj.kind.value}: target service {inj.target_service!r} "
                    "does not resolve within the topology"
                )
        for wl in self.workloads:
            wl.validate()

    def injections_of(self, kind: PatternKind) -> tuple[PatternInjection, ...]:
        return tuple(inj for inj in self.injections if inj.kind == kind)

    def workload(self, level: WorkloadLevel) -> WorkloadProfile:
        for wl in self.workloads:
            if wl.level == level:
                return wl
        raise KeyError(level)


# ---------------------------------------------------------------------------
# document parsing


def parse_duration(value: Any, what: str) -> float:
    """Accept bare seconds (int/float) or strings like "1s", "250ms", "2m"."""
    if isinstance(value, bool):
        raise ConfigError(f"{what}: duration must be a number or string, got bool")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        text = value.strip().lower()
        for suffix, mult in (("ms", 0.001), ("s", 1.0), ("m", 60.0)):
            if text.endswith(suffix):
                try:
                    return float(text[: -len(suffix)]) * mult
                except ValueError:
                    break
        try:
            return float(text)
        except ValueError:
            pass
    raise ConfigError(f"{what}: cannot parse duration from {value!r}")


def _check_port(port: Any, what: str) -> None:
    if not isinstance(port, int) or isinstance(port, bool) or not (0 <= port <= 65535):
        raise ConfigError(f"{what}: port must be an integer in [0, 65535], got {port!r}")


def _require_mapping(node: Any, what: str) -> dict:
    if not isinstance(node, dict):
        raise ConfigError(f"{what}: expected a mapping, got {type(node).__name__}")
    return node


def _take(node: dict, what: str, required: tuple[str, ...], optional: tuple[str, ...] = ()) -> dict:
    """Validate key set of a mapping; unknown keys are rejected."""
    allowed = set(required) | set(optional)
    unknown = set(node) - allowed
    if unknown:
        raise ConfigError(f"{what}: unknown key(s) {sorted(unknown)}")
    missing = [key for key in required if key not in node]
    if missing:
        raise ConfigError(f"{what}: missing required key(s) {missing}")
    return node


def _opt_str(node: dict, key: str) -> Optional[str]:
    value = node.get(key)
    if value in (None, ""):
        return None
    return str(value)


def _parse_enum(enum_cls, raw: Any, what: str):
    try:
        return enum_cls(str(raw).strip().lower())
    except ValueError:
        valid = [member.value for member in enum_cls]
        raise ConfigError(f"{what}: expected one of {valid}, got {raw!r}") from None


def _parse_int(node: dict, key: str, what: str) -> int:
    value = node[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{what}.{key}: expected integer, got {value!r}")
    return value


def _parse_service(node: Any, idx: int) -> ServiceSpec:
    what = f"services[{idx}]"
    node = _take(
        _require_mapping(node, what),
        what,
        ("name", "port", "stage_kind"),
        ("endpoint", "work_cost_ms", "failure_mode"),
    )
    failure = None
    if node.get("failure_mode") is not None:
        fnode = _take(
            _require_mapping(node["failure_mode"], f"{what}.failure_mode"),
            f"{what}.failure_mode",
            ("kind",),
            ("n", "rate", "sleep_s"),
        )
        failure = FailureMode(
            kind=str(fnode["kind"]),
            n=int(fnode.get("n", 0)),
            rate=float(fnode.get("rate", 0.0)),
            sleep_s=float(fnode.get("sleep_s", 8.0)),
        )
    return ServiceSpec(
        name=str(node["name"]),
        port=_parse_int(node, "port", what),
        stage_kind=_parse_enum(StageKind, node["stage_kind"], f"{what}.stage_kind"),
        endpoint=str(node.get("endpoint", "/")),
        work_cost_ms=float(node.get("work_cost_ms", 8.0)),
        failure_mode=failure,
    )


def _parse_pipeline(node: Any, idx: int) -> PipelineSpec:
    what = f"pipelines[{idx}]"
    node = _take(_require_mapping(node, what), what, ("id", "stages"))
    stages = node["stages"]
    if not isinstance(stages, list):
        raise ConfigError(f"{what}.stages: expected a list")
    return PipelineSpec(pipeline_id=str(node["id"]), stages=tuple(str(s) for s in stages))


def _parse_pattern(node: Any, idx: int) -> PatternInjection:
    what = f"patterns[{idx}]"
    node = _require_mapping(node, what)
    if "kind" not in node:
        raise ConfigError(f"{what}: missing required key(s) ['kind']")
    kind = _parse_enum(PatternKind, node["kind"], f"{what}.kind")
    what = f"patterns[{idx}]({kind.value})"

    if kind is PatternKind.CIRCUIT_BREAKER:
        node = _take(
            node,
            what,
            ("kind", "service", "route", "port", "max_connections", "max_pending",
             "max_requests", "retries", "timeout"),
            ("failure_threshold", "open_duration"),
        )
        config: PatternConfig = CircuitBreakerConfig(
            service=str(node["service"]),
            route=str(node["route"]),
            port=_parse_int(node, "port", what),
            max_connections=_parse_int(node, "max_connections", what),
            max_pending=_parse_int(node, "max_pending", what),
            max_requests=_parse_int(node, "max_requests", what),
            retries=_parse_int(node, "retries", what),
            timeout_s=parse_duration(node["timeout"], f"{what}.timeout"),
            failure_threshold=int(node.get("failure_threshold", 5)),
            open_duration_s=parse_duration(node.get("open_duration", 5.0), f"{what}.open_duration"),
        )
    elif kind is PatternKind.ASYNC_REQUEST_REPLY:
        node = _take(node, what, ("kind", "service", "endpoint_path"),
                     ("job_retention", "poll_path_prefix"))
        config = AsyncReplyConfig(
            service=str(node["service"]),
            endpoint_path=str(node["endpoint_path"]),
            job_retention_s=parse_duration(
                node.get("job_retention", DEFAULT_JOB_RETENTION_S), f"{what}.job_retention"),
            poll_path_prefix=str(node.get("poll_path_prefix", DEFAULT_POLL_PREFIX)),
        )
    elif kind is PatternKind.REQUEST_COLLAPSING:
        node = _take(
            node,
            what,
            ("kind", "backend_service", "backend_port", "endpoint_path", "batch_query"),
            ("query_parameter", "id_field", "collapse_window",
             "db_host", "db_port", "db_name", "db_username", "db_password"),
        )
        db_port = node.get("db_port")
        db = DbFields(
            host=_opt_str(node, "db_host"),
            port=int(db_port) if db_port not in (None, "") else None,
            name=_opt_str(node, "db_name"),
            username=_opt_str(node, "db_username"),
            password=_opt_str(node, "db_password"),
        )
        if db == DbFields():
            db = None
        config = CollapsingConfig(
            backend_service=str(node["backend_service"]),
            backend_port=_parse_int(node, "backend_port", what),
            endpoint_path=str(node["endpoint_path"]),
            batch_query=str(node["batch_query"]),
            query_parameter=_opt_str(node, "query_parameter"),
            id_field=_opt_str(node, "id_field"),
            db=db,
            collapse_window_s=parse_duration(
                node.get("collapse_window", DEFAULT_COLLAPSE_WINDOW_S), f"{what}.collapse_window"),
        )
    elif kind is PatternKind.GATEWAY_OFFLOADING:
        node = _take(node, what, ("kind", "service_name", "service_port", "service_endpoint"),
                     ("offloaded_concerns", "api_keys", "access_log_path"))
        raw_concerns = node.get("offloaded_concerns")
        if raw_concerns is None:
            concerns = frozenset(Concern)
        else:
            if not isinstance(raw_concerns, list):
                raise ConfigError(f"{what}.offloaded_concerns: expected a list")
            concerns = frozenset(
                _parse_enum(Concern, c, f"{what}.offloaded_concerns") for c in raw_concerns
            )
        keys = node.get("api_keys")
        config = GatewayOffloadConfig(
            service_name=str(node["service_name"]),
            service_port=_parse_int(node, "service_port", what),
            service_endpoint=str(node["service_endpoint"]),
            offloaded_concerns=concerns,
            api_keys=tuple(str(k) for k in keys) if keys is not None else DEFAULT_API_KEYS,
            access_log_path=_opt_str(node, "access_log_path"),
        )
    else:
        node = _take(node, what, ("kind", "backend_service", "backend_port",
                                  "cached_endpoints", "ttl", "max_connections"))
        endpoints = node["cached_endpoints"]
        if not isinstance(endpoints, list):
            raise ConfigError(f"{what}.cached_endpoints: expected a list")
        config = CacheAsideConfig(
            backend_service=str(node["backend_service"]),
            backend_port=_parse_int(node, "backend_port", what),
            cached_endpoints=tuple(str(e) for e in endpoints),
            ttl_s=parse_duration(node["ttl"], f"{what}.ttl"),
            max_connections=_parse_int(node, "max_connections", what),
        )
    return PatternInjection(kind=kind, config=config)


def parse_pattern_node(node: dict) -> PatternInjection:
    """Parse and validate a single pattern block (used by the admin endpoint)."""
    injection = _parse_pattern(node, 0)
    injection.validate()
    return injection


def _parse_workload(node: Any, idx: int) -> WorkloadProfile:
    what = f"workloads[{idx}]"
    node = _take(_require_mapping(node, what), what, ("level",),
                 ("step_interval", "user_increment", "duration", "think_time"))
    level = _parse_enum(WorkloadLevel, node["level"], f"{what}.level")
    return WorkloadProfile(
        level=level,
        step_interval_s=parse_duration(node.get("step_interval", 30.0), f"{what}.step_interval"),
        user_increment=int(node.get("user_increment", 0)),
        duration_s=parse_duration(node.get("duration", 300.0), f"{what}.duration"),
        think_time_s=parse_duration(node.get("think_time", 0.1), f"{what}.think_time"),
    )


def parse_experiment_config(text: str) -> ExperimentConfig:
    """Parse and validate a full experiment document.

    Raises ConfigError with a line:column location for syntax errors, or with
    the violated invariant named for semantic errors.
    """
    try:
        root = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        location = f"{mark.line + 1}:{mark.column + 1}" if mark is not None else None
        raise ConfigError(f"document is not well-formed YAML: {exc}", location) from exc
    if root is None:
        raise ConfigError("document is empty")
    root = _take(_require_mapping(root, "document"), "document",
                 ("services", "pipelines"), ("patterns", "workloads", "dataset"))

    for section in ("services", "pipelines"):
        if not isinstance(root[section], list):
            raise ConfigError(f"{section}: expected a list")
    services = tuple(_parse_service(node, i) for i, node in enumerate(root["services"]))
    pipelines = tuple(_parse_pipeline(node, i) for i, node in enumerate(root["pipelines"]))
    patterns = tuple(_parse_pattern(node, i) for i, node in enumerate(root.get("patterns") or []))
    workloads = tuple(_parse_workload(node, i) for i, node in enumerate(root.get("workloads") or []))

    dataset = DatasetConfig()
    if root.get("dataset") is not None:
        dnode = _take(_require_mapping(root["dataset"], "dataset"), "dataset", (), ("seed", "size"))
        dataset = DatasetConfig(
            seed=int(dnode.get("seed", DEFAULT_DATASET_SEED)),
            size=int(dnode.get("size", DEFAULT_DATASET_SIZE)),
        )

    config = ExperimentConfig(
        topology=PipelineTopology(services=services, pipelines=pipelines),
        injections=patterns,
        workloads=workloads,
        dataset=dataset,
    )
    config.validate()
    return config


# ---------------------------------------------------------------------------
# serialization (round-trip partner of parse_experiment_config)


def _service_to_node(svc: ServiceSpec) -> dict:
    node: dict[str, Any] = {
        "name": svc.name,
        "port": svc.port,
        "stage_kind": svc.stage_kind.value,
        "endpoint": svc.endpoint,
        "work_cost_ms": svc.work_cost_ms,
    }
    if svc.failure_mode is not None:
        fm = svc.failure_mode
        node["failure_mode"] = {"kind": fm.kind, "n": fm.n, "rate": fm.rate, "sleep_s": fm.sleep_s}
    return node


def _pattern_to_node(inj: PatternInjection) -> dict:
    cfg = inj.config
    if isinstance(cfg, CircuitBreakerConfig):
        return {
            "kind": inj.kind.value, "service": cfg.service, "route": cfg.route, "port": cfg.port,
            "max_connections": cfg.max_connections, "max_pending": cfg.max_pending,
            "max_requests": cfg.max_requests, "retries": cfg.retries, "timeout": cfg.timeout_s,
            "failure_threshold": cfg.failure_threshold, "open_duration": cfg.open_duration_s,
        }
    if isinstance(cfg, AsyncReplyConfig):
        return {
            "kind": inj.kind.value, "service": cfg.service, "endpoint_path": cfg.endpoint_path,
            "job_retention": cfg.job_retention_s, "poll_path_prefix": cfg.poll_path_prefix,
        }
    if isinstance(cfg, CollapsingConfig):
        node = {
            "kind": inj.kind.value, "backend_service": cfg.backend_service,
            "backend_port": cfg.backend_port, "endpoint_path": cfg.endpoint_path,
            "batch_query": cfg.batch_query, "collapse_window": cfg.collapse_window_s,
        }
        if cfg.query_parameter is not None:
            node["query_parameter"] = cfg.query_parameter
        if cfg.id_field is not None:
            node["id_field"] = cfg.id_field
        if cfg.db is not None:
            for key, value in (("db_host", cfg.db.host), ("db_port", cfg.db.port),
                               ("db_name", cfg.db.name), ("db_username", cfg.db.username),
                               ("db_password", cfg.db.password)):
                if value is not None:
                    node[key] = value
        return node
    if isinstance(cfg, GatewayOffloadConfig):
        node = {
            "kind": inj.kind.value, "service_name": cfg.service_name,
            "service_port": cfg.service_port, "service_endpoint": cfg.service_endpoint,
            "offloaded_concerns": sorted(c.value for c in cfg.offloaded_concerns),
            "api_keys": list(cfg.api_keys),
        }
        if cfg.access_log_path is not None:
            node["access_log_path"] = cfg.access_log_path
        return node
    return {
        "kind": inj.kind.value, "backend_service": cfg.backend_service,
        "backend_port": cfg.backend_port, "cached_endpoints": list(cfg.cached_endpoints),
        "ttl": cfg.ttl_s, "max_connections": cfg.max_connections,
    }


def serialize_experiment_config(config: ExperimentConfig) -> str:
    doc = {
        "dataset": {"seed": config.dataset.seed, "size": config.dataset.size},
        "services": [_service_to_node(svc) for svc in config.topology.services],
        "pipelines": [
            {"id": pipe.pipeline_id, "stages": list(pipe.stages)}
            for pipe in config.topology.pipelines
        ],
        "patterns": [_pattern_to_node(inj) for inj in config.injections],
        "workloads": [
            {
                "level": wl.level.value,
                "step_interval": wl.step_interval_s,
                "user_increment": wl.user_increment,
                "duration": wl.duration_s,
                "think_time": wl.think_time_s,
            }
            for wl in config.workloads
        ],
    }
    return yaml.safe_dump(doc, sort_keys=False)


# ---------------------------------------------------------------------------
# built-in case study


def default_case_study() -> ExperimentConfig:
    """The built-in data-sharing pipeline experiment.

    Six services on ports 8080-8084 and 8089, four pipelines with stage reuse,
    one injection per pattern kind and the three stepped workload levels.
    """
    services = (
        ServiceSpec("coordinator", 8080, StageKind.COORDINATOR, "/", work_cost_ms=2.0),
        ServiceSpec("filter-service", 8081, StageKind.FILTER, "/", work_cost_ms=8.0),
        ServiceSpec("aggregation-service", 8082, StageKind.AGGREGATION, "/", work_cost_ms=6.0),
        ServiceSpec("anonymization-service", 8083, StageKind.ANONYMIZATION, "/", work_cost_ms=10.0),
        ServiceSpec("formatting-service", 8084, StageKind.FORMATTING, "/", work_cost_ms=8.0),
        ServiceSpec("data-product-service", 8089, StageKind.DATA_PRODUCT, "/data-json",
                    work_cost_ms=12.0),
    )
    pipelines = (
        PipelineSpec("p1", ("filter-service", "formatting-service")),
        PipelineSpec("p2", ("filter-service", "aggregation-service", "formatting-service")),
        PipelineSpec("p3", ("anonymization-service", "formatting-service")),
        PipelineSpec("p4", ("filter-service", "anonymization-service", "aggregation-service",
                            "formatting-service")),
    )
    injections = (
        PatternInjection(
            PatternKind.CIRCUIT_BREAKER,
            CircuitBreakerConfig(
                service="filter-service", route="/", port=8081,
                max_connections=100, max_pending=20, max_requests=1,
                retries=2, timeout_s=1.0,
            ),
        ),
        PatternInjection(
            PatternKind.ASYNC_REQUEST_REPLY,
            AsyncReplyConfig(service="filter-service", endpoint_path="/"),
        ),
        PatternInjection(
            PatternKind.REQUEST_COLLAPSING,
            CollapsingConfig(
                backend_service="data-product-service", backend_port=8089,
                endpoint_path="/data-json", batch_query="/data-json",
                db=DbFields(host="data-product-service.user", port=8089),
            ),
        ),
        PatternInjection(
            PatternKind.GATEWAY_OFFLOADING,
            GatewayOffloadConfig(service_name="coordinator", service_port=8080,
                                 service_endpoint="/"),
        ),
        PatternInjection(
            PatternKind.CACHE_ASIDE,
            CacheAsideConfig(
                backend_service="data-product-service", backend_port=8089,
                cached_endpoints=("/data-json",), ttl_s=60.0, max_connections=100,
            ),
        ),
    )
    workloads = tuple(WorkloadProfile(level=level) for level in WorkloadLevel)
    config = ExperimentConfig(
        topology=PipelineTopology(services=services, pipelines=pipelines),
        injections=injections,
        workloads=workloads,
    )
    config.validate()
    return config
