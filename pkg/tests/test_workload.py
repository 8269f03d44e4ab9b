import statistics

from conftest import StubBackend
from patternbench.config import WorkloadLevel, WorkloadProfile
from patternbench.metrics import RunCollector
from patternbench.workload import concurrency_trace, plateau_values, run_workload


def quick_profile(**overrides):
    values = dict(level=WorkloadLevel.LOW, step_interval_s=0.8, user_increment=4,
                  duration_s=2.4, think_time_s=0.03)
    values.update(overrides)
    return WorkloadProfile(**values)


def test_zero_duration_run_is_clean():
    profile = quick_profile(duration_s=0.0)
    summary = run_workload(profile, ["http://127.0.0.1:1/x"])
    assert summary.total_requests == 0
    assert summary.trace == []
    assert summary.duration_s == 0.0


def test_stepped_plateaus_match_schedule():
    profile = quick_profile()
    with StubBackend() as backend:
        summary = run_workload(profile, [f"http://127.0.0.1:{backend.port}/pipeline/x"],
                               trace_interval_s=0.1)
    plateaus = plateau_values(concurrency_trace(summary), profile.step_interval_s,
                              boundary_margin_s=0.15)
    expected = {0: 4, 1: 8, 2: 12}
    for step, want in expected.items():
        assert plateaus.get(step), f"no interior samples for step {step}"
        level = statistics.median(plateaus[step])
        assert abs(level - want) <= 1, (step, plateaus[step])


def test_single_plateau_when_duration_equals_step():
    profile = quick_profile(duration_s=0.8)
    with StubBackend() as backend:
        summary = run_workload(profile, [f"http://127.0.0.1:{backend.port}/x"],
                               trace_interval_s=0.1)
    assert summary.peak_users == profile.user_increment
    assert all(users <= profile.user_increment + 1 for _, users in summary.trace)


def test_closed_loop_one_outstanding_request_per_user():
    profile = quick_profile(think_time_s=0.0, duration_s=1.5)
    with StubBackend(delay_s=0.02) as backend:
        run_workload(profile, [f"http://127.0.0.1:{backend.port}/x"])
        assert backend.closed_loop_violations == 0
        assert backend.calls > 0


def test_round_robin_target_assignment():
    profile = quick_profile(user_increment=4, duration_s=0.9, step_interval_s=0.9)
    with StubBackend() as a, StubBackend() as b:
        run_workload(profile, [f"http://127.0.0.1:{a.port}/pipeline/p1",
                               f"http://127.0.0.1:{b.port}/pipeline/p2"])
        assert a.calls > 0 and b.calls > 0


def test_unreachable_target_yields_connect_error_samples():
    profile = quick_profile(user_increment=2, duration_s=0.8, step_interval_s=0.8,
                            think_time_s=0.1)
    collector = RunCollector("r", "baseline", "low")
    summary = run_workload(profile, ["http://127.0.0.1:1/pipeline/p1"],
                           sink=collector, request_timeout_s=0.5)
    assert summary.total_requests > 0
    samples = collector.samples()
    assert samples and all(sample.status == 0 for sample in samples)
    assert summary.error_requests == summary.total_requests


def test_samples_carry_pipeline_and_pattern_labels():
    profile = quick_profile(user_increment=2, duration_s=0.8, step_interval_s=0.8)
    collector = RunCollector("run-1", "cache_aside", "low")
    with StubBackend(script=lambda *a: (200, {"x-cache": "hit"}, b"ok")) as backend:
        run_workload(profile, [f"http://127.0.0.1:{backend.port}/pipeline/p2"],
                     sink=collector, pattern_label="cache_aside", run_id="run-1")
    sample = collector.samples()[0]
    assert sample.pipeline_id == "p2"
    assert sample.pattern_label == "cache_aside"
    assert sample.cache_flag == "hit"
    assert sample.run_id == "run-1"


def test_requests_stop_at_duration():
    profile = quick_profile(duration_s=0.8, step_interval_s=0.8, think_time_s=0.0)
    with StubBackend() as backend:
        summary = run_workload(profile, [f"http://127.0.0.1:{backend.port}/x"])
        assert summary.duration_s <= profile.duration_s + 0.01
        settled = backend.calls
        import time

        time.sleep(0.3)
        assert backend.calls == settled  # no stragglers after the run ends
