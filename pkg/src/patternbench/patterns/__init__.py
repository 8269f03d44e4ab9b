"""Injectable pattern middlewares and their factory."""

from __future__ import annotations

from patternbench.config import (
    AsyncReplyConfig,
    CacheAsideConfig,
    CircuitBreakerConfig,
    CollapsingConfig,
    GatewayOffloadConfig,
    PatternInjection,
    PatternKind,
)
from patternbench.patterns.async_reply import AsyncReplyMiddleware
from patternbench.patterns.circuit_breaker import BreakerState, CircuitBreakerMiddleware
from patternbench.patterns.collapse_cache import (
    CacheAsideMiddleware,
    RequestCollapsingMiddleware,
)
from patternbench.patterns.gateway import GatewayOffloadMiddleware
from patternbench.proxy import Middleware

__all__ = [
    "AsyncReplyMiddleware",
    "BreakerState",
    "CircuitBreakerMiddleware",
    "CacheAsideMiddleware",
    "RequestCollapsingMiddleware",
    "GatewayOffloadMiddleware",
    "build_middleware",
]


def build_middleware(injection: PatternInjection) -> Middleware:
    """Fresh middleware instance for one injection; state never outlives removal."""
    injection.validate()
    config = injection.config
    if injection.kind is PatternKind.CIRCUIT_BREAKER:
        assert isinstance(config, CircuitBreakerConfig)
        return CircuitBreakerMiddleware(config)
    if injection.kind is PatternKind.ASYNC_REQUEST_REPLY:
        assert isinstance(config, AsyncReplyConfig)
        return AsyncReplyMiddleware(config)
    if injection.kind is PatternKind.REQUEST_COLLAPSING:
        assert isinstance(config, CollapsingConfig)
        return RequestCollapsingMiddleware(config)
    if injection.kind is PatternKind.GATEWAY_OFFLOADING:
        assert isinstance(config, GatewayOffloadConfig)
        return GatewayOffloadMiddleware(config)
    assert isinstance(config, CacheAsideConfig)
    return CacheAsideMiddleware(config)
