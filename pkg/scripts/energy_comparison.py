#!/usr/bin/env python3
"""Directional energy comparisons at desk scale.

Two paired runs against the built-in pipelines:
  1. cache-aside vs baseline under repeated identical load: the data product's
     energy proxy should drop (hits bypass the backend entirely);
  2. circuit breaker in front of a 100%-failing data product: total energy
     should drop (fail-fast stops burning work on doomed requests).
"""

import argparse
import pathlib
import sys
from dataclasses import replace

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from patternbench.config import (  # noqa: E402
    CircuitBreakerConfig,
    FailureMode,
    PatternInjection,
    PatternKind,
    StageKind,
    WorkloadLevel,
    default_case_study,
)
from patternbench.orchestrator import ExperimentOptions, run_experiment  # noqa: E402


def pct_change(before: float, after: float) -> str:
    if before <= 0:
        return "n/a"
    return f"{(after - before) / before * 100.0:+.1f}%"


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--scale", type=float, default=0.05)
    parser.add_argument("--ephemeral", action="store_true")
    args = parser.parse_args()
    base = default_case_study()
    options = dict(levels=[WorkloadLevel.LOW], scale=args.scale,
                   ephemeral=args.ephemeral, request_timeout_s=20.0)

    print("== cache-aside vs baseline (healthy pipelines) ==")
    results, _ = run_experiment(base, ExperimentOptions(
        patterns=[PatternKind.CACHE_ASIDE], **options))
    baseline, cached = results
    before = baseline.service_energy("data-product-service")
    after = cached.service_energy("data-product-service")
    print(f"  data-product energy proxy: {before:8.3f} -> {after:8.3f}  "
          f"({pct_change(before, after)})")

    print("== circuit breaker vs baseline (failing data product) ==")
    failing = tuple(
        replace(svc, failure_mode=FailureMode(kind="fail_rate", rate=1.0))
        if svc.stage_kind is StageKind.DATA_PRODUCT else svc
        for svc in base.topology.services)
    breaker = PatternInjection(PatternKind.CIRCUIT_BREAKER, CircuitBreakerConfig(
        service="data-product-service", route="/data-json", port=8089,
        max_connections=100, max_pending=20, max_requests=1, retries=2,
        timeout_s=1.0))
    config = replace(base,
                     topology=replace(base.topology, services=failing),
                     injections=(breaker,),
                     workloads=tuple(replace(wl, think_time_s=2.0)
                                     for wl in base.workloads))
    results, _ = run_experiment(config, ExperimentOptions(
        patterns=[PatternKind.CIRCUIT_BREAKER], **options))
    baseline, guarded = results
    print(f"  total energy proxy:        {baseline.total_energy_proxy:8.3f} -> "
          f"{guarded.total_energy_proxy:8.3f}  "
          f"({pct_change(baseline.total_energy_proxy, guarded.total_energy_proxy)})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
