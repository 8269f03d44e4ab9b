#!/usr/bin/env python3
"""Run the full {baseline + patterns} x {levels} matrix at desk scale and
export CSV (plus figures when the plot component is built).

    python3 scripts/run_experiment.py --scale 0.05 --out results/

At scale 1.0 this is the full 300s-per-run experiment (90 minutes for all
18 runs); 0.05 finishes in about five minutes.
"""

import argparse
import pathlib
import subprocess
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from patternbench.cli import _find_plotter  # noqa: E402
from patternbench.config import default_case_study, parse_experiment_config  # noqa: E402
from patternbench.orchestrator import ExperimentOptions, run_experiment  # noqa: E402


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", help="experiment YAML (default: built-in case study)")
    parser.add_argument("--scale", type=float, default=0.05)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default="results")
    parser.add_argument("--ephemeral", action="store_true",
                        help="dynamic ports instead of the configured 8080-8089")
    args = parser.parse_args()

    if args.config:
        config = parse_experiment_config(pathlib.Path(args.config).read_text())
    else:
        config = default_case_study()
    out_dir = pathlib.Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "results.csv"

    results, _ = run_experiment(config, ExperimentOptions(
        scale=args.scale, seed=args.seed, out_csv=str(csv_path),
        ephemeral=args.ephemeral))
    print(f"\n{len(results)} runs -> {csv_path}")
    for run in results:
        status = "FAILED" if run.failed else (
            f"{run.total.requests:6d} req  energy {run.total_energy_proxy:8.3f}")
        print(f"  {run.run_id:32s} {status}")

    plotter = _find_plotter(None)
    if plotter is None:
        print("plot component not built; skipping figures (see plotter/README note)")
        return 0
    figures_dir = out_dir / "figures"
    figures_dir.mkdir(exist_ok=True)
    proc = subprocess.run(["node", str(plotter), str(csv_path), str(figures_dir)])
    return proc.returncode


if __name__ == "__main__":
    sys.exit(main())
