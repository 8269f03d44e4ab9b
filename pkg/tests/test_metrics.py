import math
import threading

import pytest
from hypothesis import given, strategies as st

from patternbench.metrics import (
    CSV_COLUMNS,
    EnergyRegistry,
    MetricSample,
    PipelineStats,
    RunCollector,
    RunResult,
    ServiceEnergy,
    burn_cpu_ms,
    export_csv,
    parse_results_csv,
    percentile_us,
)


def sample(pipeline="p1", status=200, latency_us=1000, run_id="r1"):
    return MetricSample(timestamp=0.0, run_id=run_id, pipeline_id=pipeline,
                        status=status, latency_us=latency_us, request_bytes=10,
                        response_bytes=20)


def synthetic_result(run_id="r1", pattern="baseline", workload="low",
                     pipelines=4, services=6):
    pipeline_stats = {
        f"p{i}": PipelineStats(requests=10 + i, errors=i, p50_us=100 + i,
                               p95_us=200 + i, p99_us=300 + i,
                               throughput_rps=1.0 / (i + 3))
        for i in range(1, pipelines + 1)}
    service_energy = {
        f"svc{i}": ServiceEnergy(f"svc{i}", cpu_seconds=0.1 * i + 1e-9,
                                 energy_proxy=(0.1 * i + 1e-9) * 0.7)
        for i in range(1, services + 1)}
    total = PipelineStats(requests=sum(s.requests for s in pipeline_stats.values()),
                          errors=sum(s.errors for s in pipeline_stats.values()),
                          p50_us=123, p95_us=456, p99_us=789,
                          throughput_rps=math.pi)
    total_cpu = sum(se.cpu_seconds for se in service_energy.values())
    return RunResult(run_id=run_id, pattern=pattern, workload=workload,
                     pipelines=pipeline_stats, services=service_energy, total=total,
                     total_cpu_seconds=total_cpu, total_energy_proxy=total_cpu * 0.7)


# -- samples and aggregation -----------------------------------------------------


def test_record_then_count_one():
    collector = RunCollector("r1", "baseline", "low")
    collector.record(sample())
    result = collector.finalize(duration_s=1.0)
    assert result.total.requests == 1
    assert result.pipelines["p1"].requests == 1


def test_zero_samples_zero_aggregates():
    collector = RunCollector("r1", "baseline", "low")
    result = collector.finalize(duration_s=1.0)
    assert result.total == PipelineStats(0, 0, 0, 0, 0, 0.0)
    assert result.pipelines == {}


def test_exact_percentiles_against_sort_oracle():
    import random

    rng = random.Random(17)
    latencies = [rng.randrange(1, 1_000_000) for _ in range(1000)]
    collector = RunCollector("r1", "baseline", "low")
    for latency in latencies:
        collector.record(sample(latency_us=latency))
    result = collector.finalize(duration_s=10.0)
    ordered = sorted(latencies)
    assert result.total.p50_us == ordered[math.ceil(0.50 * 1000) - 1]
    assert result.total.p95_us == ordered[math.ceil(0.95 * 1000) - 1]
    assert result.total.p99_us == ordered[math.ceil(0.99 * 1000) - 1]


@given(st.lists(st.integers(0, 10**7), min_size=1, max_size=300),
       st.sampled_from([50, 95, 99]))
def test_percentile_matches_nearest_rank_definition(latencies, q):
    ordered = sorted(latencies)
    expected = ordered[max(1, math.ceil(q / 100 * len(ordered))) - 1]
    assert percentile_us(ordered, q) == expected


def test_invalid_samples_rejected():
    with pytest.raises(ValueError, match="latency"):
        sample(latency_us=-1)
    with pytest.raises(ValueError, match="status"):
        sample(status=42)
    assert sample(status=0).is_error  # connect-error sentinel


def test_conservation_totals():
    collector = RunCollector("r1", "baseline", "low")
    for pipeline in ("p1", "p2", "p3"):
        for i in range(5):
            collector.record(sample(pipeline=pipeline, status=500 if i == 0 else 200))
    result = collector.finalize(duration_s=2.0)
    assert result.total.requests == sum(s.requests for s in result.pipelines.values())
    assert result.total.errors == sum(s.errors for s in result.pipelines.values())


def test_concurrent_recording_loses_nothing():
    collector = RunCollector("r1", "baseline", "low")

    def writer():
        for _ in range(500):
            collector.record(sample())

    threads = [threading.Thread(target=writer) for _ in range(8)]
    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join()
    assert collector.sample_count() == 4000


# -- energy accounting --------------------------------------------------------------


def test_energy_account_measures_burned_cpu():
    registry = EnergyRegistry()
    with registry.measure("svc"):
        burn_cpu_ms(50.0)
    measured = registry.measure_service_cpu("svc")
    assert 0.050 <= measured <= 0.075


def test_energy_is_monotone_and_sleep_free():
    import time

    registry = EnergyRegistry()
    with registry.measure("svc"):
        time.sleep(0.2)
    assert registry.measure_service_cpu("svc") < 0.02


def test_collector_windows_energy_between_construction_and_finalize():
    registry = EnergyRegistry(joules_per_cpu_second=2.0)
    with registry.measure("svc"):
        burn_cpu_ms(30.0)
    collector = RunCollector("r1", "baseline", "low", registry)
    with registry.measure("svc"):
        burn_cpu_ms(40.0)
    result = collector.finalize(duration_s=1.0)
    assert 0.040 <= result.services["svc"].cpu_seconds <= 0.060
    assert result.total_energy_proxy == pytest.approx(result.total_cpu_seconds * 2.0)
    assert result.total_energy_proxy == pytest.approx(
        sum(se.energy_proxy for se in result.services.values()))


def test_live_sample_stream_broadcasts_jsonl():
    import json
    import socket

    from patternbench.metrics import LiveSampleStream

    stream = LiveSampleStream()
    try:
        client = socket.create_connection(("127.0.0.1", stream.port), timeout=2.0)
        client.settimeout(2.0)
        import time

        time.sleep(0.05)  # let the acceptor register the client
        collector = RunCollector("r1", "baseline", "low", live_stream=stream)
        collector.record(sample(latency_us=777))
        line = client.makefile().readline()
        decoded = json.loads(line)
        assert decoded["latency_us"] == 777
        assert decoded["run_id"] == "r1"
        client.close()
    finally:
        stream.close()


# -- CSV ------------------------------------------------------------------------------


def test_csv_round_trip_is_exact(tmp_path):
    results = [synthetic_result("r1"), synthetic_result("r2", pattern="cache_aside")]
    path = tmp_path / "out.csv"
    export_csv(results, str(path))
    assert parse_results_csv(str(path)) == results


def test_csv_row_arithmetic(tmp_path):
    results = [synthetic_result("r1"), synthetic_result("r2")]
    path = tmp_path / "out.csv"
    export_csv(results, str(path))
    lines = path.read_text().splitlines()
    assert len(lines) == 1 + 2 * (4 * 6 + 1)
    assert lines[0] == ",".join(CSV_COLUMNS)


def test_empty_run_exports_header_plus_total(tmp_path):
    collector = RunCollector("r1", "baseline", "low")
    result = collector.finalize(duration_s=1.0)
    path = tmp_path / "empty.csv"
    export_csv([result], str(path))
    lines = path.read_text().splitlines()
    assert len(lines) == 2
    assert lines[1].endswith("total")
    assert parse_results_csv(str(path)) == [result]


def test_errored_run_row(tmp_path):
    from patternbench.orchestrator import failed_run

    result = failed_run("r1", "cache_aside", "low")
    path = tmp_path / "err.csv"
    export_csv([result], str(path))
    parsed = parse_results_csv(str(path))
    assert parsed[0].failed


def test_export_requires_results(tmp_path):
    with pytest.raises(ValueError):
        export_csv([], str(tmp_path / "x.csv"))


def test_export_unwritable_path():
    with pytest.raises(OSError):
        export_csv([synthetic_result()], "/nonexistent-dir/x.csv")


def test_parse_rejects_foreign_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ValueError, match="header"):
        parse_results_csv(str(path))


@given(st.floats(min_value=0, max_value=1e6, allow_nan=False,
                 allow_infinity=False),
       st.floats(min_value=0, max_value=1e4, allow_nan=False, allow_infinity=False))
def test_float_fields_round_trip_bit_exact(tmp_path_factory, throughput, cpu):
    result = RunResult(
        run_id="r", pattern="baseline", workload="low",
        pipelines={"p1": PipelineStats(1, 0, 1, 2, 3, throughput)},
        services={"s1": ServiceEnergy("s1", cpu, cpu * 1.0)},
        total=PipelineStats(1, 0, 1, 2, 3, throughput),
        total_cpu_seconds=cpu, total_energy_proxy=cpu * 1.0)
    path = tmp_path_factory.mktemp("csv") / "roundtrip.csv"
    export_csv([result], str(path))
    parsed = parse_results_csv(str(path))[0]
    assert parsed.total.throughput_rps == throughput
    assert parsed.services["s1"].cpu_seconds == cpu
    assert parsed == result
