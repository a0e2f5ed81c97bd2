"""Command line entry point: run, validate, and replay scenarios.

Exit status: 0 on success, 1 on configuration/validation errors, 2 on solver
or simulation failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from gaitlab.config import ConfigError, ScenarioConfig
from gaitlab.hybrid import SimulationError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gaitlab",
        description="Desk-scale dynamic-walking laboratory: scenario runner",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a scenario config end-to-end")
    run_p.add_argument("config", help="path to the scenario config (YAML/JSON)")
    run_p.add_argument("--out", help="output directory (overrides config)")
    run_p.add_argument("--seed", type=int, help="random seed (overrides config)")
    run_p.add_argument("--tol", type=float, help="integration rtol/atol override")

    val_p = sub.add_parser("validate", help="check a scenario config and exit")
    val_p.add_argument("config", help="path to the scenario config")

    rep_p = sub.add_parser("replay", help="re-evaluate a stored gait solution")
    rep_p.add_argument("gait", help="path to a gait.json written by hzd-compass-opt")
    rep_p.add_argument("--out", default="out-replay", help="output directory")
    rep_p.add_argument("--seed", type=int, default=0)
    rep_p.add_argument("--tol", type=float, help="integration rtol/atol override")

    return parser


def _apply_overrides(config: ScenarioConfig, args) -> ScenarioConfig:
    if getattr(args, "out", None):
        config.output_dir = args.out
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "tol", None) is not None:
        config.rtol = args.tol
        config.atol = args.tol
    return config


def cmd_run(args) -> int:
    from gaitlab.scenarios import run_scenario

    try:
        config = _apply_overrides(ScenarioConfig.from_file(args.config), args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    try:
        summary = run_scenario(config)
    except (SimulationError, ValueError, RuntimeError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2
    print(f"scenario '{summary.scenario}' finished in {summary.wall_time_s:.2f} s")
    print(f"summary: {os.path.join(config.output_dir, 'summary.json')}")
    for name, rel in summary.artifacts.items():
        print(f"  {name}: {os.path.join(config.output_dir, rel)}")
    return 0


def cmd_validate(args) -> int:
    try:
        config = ScenarioConfig.from_file(args.config)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return 1
    print(f"ok: scenario '{config.scenario}'")
    return 0


def cmd_replay(args) -> int:
    import numpy as np

    from gaitlab import gaitopt
    from gaitlab.logs import RunSummary

    try:
        solution = gaitopt.GaitSolution.from_json(args.gait)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"cannot load gait: {exc}", file=sys.stderr)
        return 1
    try:
        # slope is implied by the stored decision; replay on flat ground with
        # the same defaults used by the optimizer unless told otherwise
        from gaitlab import compass as cp
        from gaitlab.controllers import PdGains

        params = cp.CompassParams(actuated=True).validate()
        gains = PdGains(kp=[100.0], kd=[20.0], eps=0.25)
        tol = args.tol or 1e-9
        ev = gaitopt.evaluate_gait(params, solution.decision, gains, rtol=tol, atol=tol)
    except (SimulationError, ValueError) as exc:
        print(f"replay failed: {exc}", file=sys.stderr)
        return 2
    os.makedirs(args.out, exist_ok=True)
    metrics = {
        "stored_status": solution.status,
        "stored_cost": solution.cost,
        "stored_residuals": solution.residuals,
        "replayed_periodicity": ev.periodicity_norm,
        "replayed_hzd": list(ev.hzd),
        "replayed_cost": ev.cost,
        "replayed_max_torque": ev.max_torque,
        "fell": ev.fell,
    }
    summary = RunSummary(scenario="replay", seed=args.seed, metrics=metrics)
    path = summary.write(args.out)
    print(f"replayed gait: periodicity {ev.periodicity_norm:.3e}, "
          f"cost {ev.cost:.5f} (stored {solution.cost:.5f})")
    print(f"summary: {path}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"run": cmd_run, "validate": cmd_validate, "replay": cmd_replay}
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
