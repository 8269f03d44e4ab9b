"""Command-line workflow: deploy, inject, run, experiment, plot, destroy.

Exit codes: 0 success, 1 validation failure (bad config/arguments/input files),
2 runtime failure (ports, crashed runs, missing plot component).
"""

from __future__ import annotations

import argparse
import json
import logging
import pathlib
import signal
import subprocess
import sys
import threading
from dataclasses import replace

from patternbench.config import (
    ConfigError,
    ExperimentConfig,
    PatternKind,
    WorkloadLevel,
    default_case_study,
    parse_experiment_config,
    serialize_experiment_config,
)
from patternbench.http_client import UpstreamConnectError, UpstreamTimeout, http_call
from patternbench.metrics import RunCollector, export_csv, parse_results_csv
from patternbench.orchestrator import (
    WORKLOAD_HEADERS,
    DeployError,
    ExperimentOptions,
    deploy,
    run_experiment,
    scale_injection,
    start_admin,
)
from patternbench.proxy import PortInUseError
from patternbench.workload import run_workload

logger = logging.getLogger("patternbench")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

DEFAULT_ADMIN_PORT = 7171


def _load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return default_case_study()
    text = pathlib.Path(path).read_text(encoding="utf-8")
    return parse_experiment_config(text)


def _parse_patterns(raw: str) -> list[PatternKind] | None:
    if raw == "all":
        return None
    if raw in ("", "none"):
        return []
    return [PatternKind(token.strip()) for token in raw.split(",") if token.strip()]


def _parse_levels(raw: str) -> list[WorkloadLevel] | None:
    if raw == "all":
        return None
    return [WorkloadLevel(token.strip()) for token in raw.split(",") if token.strip()]


def _admin_call(port: int, method: str, path: str, payload: dict | None = None) -> dict:
    body = json.dumps(payload).encode() if payload is not None else None
    headers = {"Content-Type": "application/json"} if body else None
    response = http_call(method, "127.0.0.1", port, path, headers=headers,
                         body=body, timeout=10.0)
    try:
        decoded = json.loads(response.body)
    except ValueError:
        decoded = {"raw": response.body.decode(errors="replace")}
    if response.status >= 400:
        raise RuntimeError(f"admin {path}: {decoded.get('error', decoded)}")
    return decoded


# -- subcommands -------------------------------------------------------------


def cmd_validate(args) -> int:
    config = _load_config(args.config)
    print(f"configuration valid: {len(config.topology.services)} services, "
          f"{len(config.topology.pipelines)} pipelines, {len(config.injections)} patterns, "
          f"{len(config.workloads)} workloads")
    if args.dump:
        print(serialize_experiment_config(config), end="")
    return EXIT_OK


def cmd_deploy(args) -> int:
    config = _load_config(args.config)
    deployment = deploy(config, ephemeral=args.ephemeral)
    admin = start_admin(deployment, args.admin_port)
    for name, port in sorted(deployment.public_ports.items()):
        logger.info("service %s listening via proxy on port %d", name, port)
    logger.info("admin endpoint on port %d; deploy is healthy", admin.port)
    if args.check_only:
        admin.stop()
        deployment.stop()
        return EXIT_OK
    stop = threading.Event()
    signal.signal(signal.SIGINT, lambda *_: stop.set())
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    while not stop.is_set() and not admin.shutdown_event.is_set():
        stop.wait(0.2)
    logger.info("shutting down")
    admin.stop()
    deployment.stop()
    return EXIT_OK


def cmd_status(args) -> int:
    status = _admin_call(args.admin_port, "GET", "/status")
    print(json.dumps(status, indent=2, sort_keys=True))
    healthy = all(entry["healthy"] for entry in status["services"].values())
    return EXIT_OK if healthy else EXIT_RUNTIME


def cmd_inject(args) -> int:
    config = _load_config(args.config)
    kind = PatternKind(args.pattern)
    injections = config.injections_of(kind)
    if not injections:
        print(f"no {kind.value} block in the configuration", file=sys.stderr)
        return EXIT_VALIDATION
    from patternbench.config import _pattern_to_node  # same schema as the config file

    for injection in injections:
        node = _pattern_to_node(scale_injection(injection, args.scale))
        result = _admin_call(args.admin_port, "POST", "/inject", node)
        logger.info("injected %s on %s", result["injected"], result["service"])
    return EXIT_OK


def cmd_remove(args) -> int:
    result = _admin_call(args.admin_port, "POST", "/remove",
                         {"kind": args.pattern, "service": args.service})
    logger.info("removed %s from %s", result["removed"], result["service"])
    return EXIT_OK


def cmd_destroy(args) -> int:
    _admin_call(args.admin_port, "POST", "/shutdown")
    logger.info("deployment asked to shut down")
    return EXIT_OK


def cmd_run(args) -> int:
    config = _load_config(args.config)
    if args.seed is not None:
        config = replace(config, dataset=replace(config.dataset, seed=args.seed))
    level = WorkloadLevel(args.level)
    label = args.pattern
    deployment = deploy(config, ephemeral=args.ephemeral)
    try:
        injections = []
        if label != "baseline":
            injections = [scale_injection(inj, args.scale)
                          for inj in config.injections_of(PatternKind(label))]
            if not injections:
                print(f"no {label} block in the configuration", file=sys.stderr)
                return EXIT_VALIDATION
            for injection in injections:
                deployment.proxy.inject(injection)
        profile = config.workload(level).scaled(args.scale)
        run_id = f"{label}-{level.value}"
        collector = RunCollector(run_id, label, level.value, deployment.registry)
        logger.info("running %s for %.1fs", run_id, profile.duration_s)
        summary = run_workload(profile, deployment.pipeline_targets(), collector,
                               headers=WORKLOAD_HEADERS, pattern_label=label,
                               run_id=run_id)
        result = collector.finalize(summary.duration_s)
        export_csv([result], args.out)
        logger.info("run %s: %d requests, energy proxy %.4f; CSV at %s",
                    run_id, result.total.requests, result.total_energy_proxy, args.out)
    finally:
        deployment.stop()
    return EXIT_OK


def cmd_experiment(args) -> int:
    config = _load_config(args.config)
    options = ExperimentOptions(
        patterns=_parse_patterns(args.patterns),
        levels=_parse_levels(args.levels),
        scale=args.scale,
        seed=args.seed,
        out_csv=args.out,
        ephemeral=args.ephemeral,
    )
    results, csv_path = run_experiment(config, options)
    failed = [run.run_id for run in results if run.failed]
    logger.info("experiment finished: %d runs (%d failed); CSV at %s",
                len(results), len(failed), csv_path)
    if failed:
        logger.warning("failed runs: %s", ", ".join(failed))
    print(csv_path)
    return EXIT_OK if not failed else EXIT_RUNTIME


def _find_plotter(explicit: str | None) -> pathlib.Path | None:
    candidates = []
    if explicit:
        candidates.append(pathlib.Path(explicit))
    import os

    env = os.environ.get("PATTERNBENCH_PLOTTER")
    if env:
        candidates.append(pathlib.Path(env))
    here = pathlib.Path(__file__).resolve()
    candidates.append(here.parents[2] / "plotter" / "dist" / "main.js")
    candidates.append(pathlib.Path.cwd() / "plotter" / "dist" / "main.js")
    for candidate in candidates:
        if candidate.is_file():
            return candidate
    return None


def cmd_plot(args) -> int:
    csv_path = pathlib.Path(args.csv)
    if not csv_path.is_file():
        print(f"CSV not found: {csv_path}", file=sys.stderr)
        return EXIT_VALIDATION
    parse_results_csv(str(csv_path))  # schema check before handing off
    entry = _find_plotter(args.plotter)
    if entry is None:
        print("plot component unavailable (build plotter/ first); "
              f"the CSV remains at {csv_path}", file=sys.stderr)
        return EXIT_RUNTIME
    out_dir = pathlib.Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    proc = subprocess.run(["node", str(entry), str(csv_path), str(out_dir)],
                          capture_output=True, text=True)
    sys.stdout.write(proc.stdout)
    sys.stderr.write(proc.stderr)
    if proc.returncode != 0:
        return EXIT_VALIDATION
    return EXIT_OK


# -- argument wiring -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patternbench",
        description="Inject cloud design patterns into an HTTP pipeline testbed "
                    "and compare performance and energy-proxy metrics.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p):
        p.add_argument("--config", help="experiment YAML (defaults to the built-in case study)")

    p = sub.add_parser("validate", help="parse and validate a configuration")
    add_config(p)
    p.add_argument("--dump", action="store_true", help="print the normalized document")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("deploy", help="start the testbed and proxy; serve until stopped")
    add_config(p)
    p.add_argument("--admin-port", type=int, default=DEFAULT_ADMIN_PORT)
    p.add_argument("--ephemeral", action="store_true", help="use dynamic ports")
    p.add_argument("--check-only", action="store_true",
                   help="deploy, health-check, then tear down immediately")
    p.set_defaults(func=cmd_deploy)

    p = sub.add_parser("status", help="health of a running deployment")
    p.add_argument("--admin-port", type=int, default=DEFAULT_ADMIN_PORT)
    p.set_defaults(func=cmd_status)

    p = sub.add_parser("inject", help="attach a pattern to a running deployment")
    add_config(p)
    p.add_argument("--pattern", required=True,
                   choices=[kind.value for kind in PatternKind])
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--admin-port", type=int, default=DEFAULT_ADMIN_PORT)
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("remove", help="detach a pattern from a running deployment")
    p.add_argument("--pattern", required=True,
                   choices=[kind.value for kind in PatternKind])
    p.add_argument("--service", required=True)
    p.add_argument("--admin-port", type=int, default=DEFAULT_ADMIN_PORT)
    p.set_defaults(func=cmd_remove)

    p = sub.add_parser("destroy", help="shut a running deployment down")
    p.add_argument("--admin-port", type=int, default=DEFAULT_ADMIN_PORT)
    p.set_defaults(func=cmd_destroy)

    p = sub.add_parser("run", help="one workload run (baseline or one pattern)")
    add_config(p)
    p.add_argument("--pattern", default="baseline",
                   choices=["baseline"] + [kind.value for kind in PatternKind])
    p.add_argument("--level", default="low",
                   choices=[level.value for level in WorkloadLevel])
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="results.csv")
    p.add_argument("--ephemeral", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("experiment", help="full {baseline+patterns} x {levels} matrix")
    add_config(p)
    p.add_argument("--patterns", default="all",
                   help="'all', 'none', or comma-separated pattern kinds")
    p.add_argument("--levels", default="all", help="'all' or comma-separated levels")
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="results.csv")
    p.add_argument("--ephemeral", action="store_true")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("plot", help="render comparison figures from an experiment CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--plotter", help="path to the plot component entry (main.js)")
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s",
                        stream=sys.stdout)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (PortInUseError, DeployError) as exc:
        print(f"deployment error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (UpstreamTimeout, UpstreamConnectError) as exc:
        print(f"endpoint unreachable: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
