"""Command-line interface.

Subcommands:

* ``simulate --config c.json --out run.csv`` -- run one scenario, write the
  trace CSV and print the metric block.
* ``sweep sp-validity --config c.json --out map.csv`` -- stiffness /
  inertia-shaping / outer-frequency validity map.
* ``sweep horizons --config c.json --budget-ms 1.0 --out map.csv`` --
  per-cycle compute-time feasibility map over the MPC horizons.
* ``rmse --in run.csv`` -- metric block for an existing trace.

Exit codes: 0 success, 2 configuration error, 3 safety stop.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .scenarios import (
    CONTROLLER_NAMES,
    SCENARIO_KINDS,
    horizon_feasibility_sweep,
    load_config,
    run_scenario,
    sp_validity_sweep,
)
from .simulate import TraceLog

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SAFETY_STOP = 3

DEFAULT_NP_GRID = (2, 4, 8, 12, 16, 20, 25, 30)
DEFAULT_NC_GRID = (1, 2, 3, 4, 6, 8)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flexmpc",
        description="Flexible-joint simulation and controller experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one closed-loop scenario")
    sim.add_argument("--config", required=True, help="scenario JSON file")
    sim.add_argument("--out", required=True, help="trace CSV output path")
    sim.add_argument("--controller", choices=CONTROLLER_NAMES, help="override the configured controller")
    sim.add_argument("--scenario", choices=SCENARIO_KINDS, help="override the configured scenario kind")
    sim.set_defaults(func=_cmd_simulate)

    sweep = sub.add_parser("sweep", help="parameter studies")
    sweep_sub = sweep.add_subparsers(dest="sweep_kind", required=True)

    sv = sweep_sub.add_parser("sp-validity", help="two-time-scale validity map")
    sv.add_argument("--config", required=True)
    sv.add_argument("--out", required=True)
    sv.add_argument("--serial", action="store_true", help="disable the worker pool")
    sv.set_defaults(func=_cmd_sweep_sp)

    hz = sweep_sub.add_parser("horizons", help="horizon feasibility map")
    hz.add_argument("--config", required=True)
    hz.add_argument("--out", required=True)
    hz.add_argument("--budget-ms", type=float, default=1.0, help="per-cycle compute budget")
    hz.set_defaults(func=_cmd_sweep_horizons)

    rm = sub.add_parser("rmse", help="metric block for an existing trace CSV")
    rm.add_argument("--in", dest="infile", required=True)
    rm.set_defaults(func=_cmd_rmse)
    return parser


def _apply_overrides(cfg, args):
    if getattr(args, "controller", None):
        cfg = replace(cfg, controller=args.controller)
    if getattr(args, "scenario", None):
        # keep the configured timing; the trajectory window is re-derived
        cfg = replace(cfg, kind=args.scenario, T=None)
    return cfg


def _cmd_simulate(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    log, metrics = run_scenario(cfg)
    log.to_csv(args.out)
    for key in ("pos_rmse", "vel_rmse", "max_tau", "settled_time", "saturation_count"):
        print(f"{key}={metrics[key]}")
    if log.safety_stop:
        print(f"safety_stop={log.safety_stop_reason}", file=sys.stderr)
        return EXIT_SAFETY_STOP
    return EXIT_OK


def _cmd_sweep_sp(args) -> int:
    cfg = load_config(args.config)
    result = sp_validity_sweep(cfg, parallel=not args.serial)
    result.to_csv(args.out)
    return EXIT_OK


def _cmd_sweep_horizons(args) -> int:
    cfg = load_config(args.config)
    result = horizon_feasibility_sweep(
        cfg, DEFAULT_NP_GRID, DEFAULT_NC_GRID, budget=args.budget_ms * 1e-3
    )
    result.to_csv(args.out)
    return EXIT_OK


def _cmd_rmse(args) -> int:
    import numpy as np

    log = TraceLog.from_csv(args.infile)
    pos = float(np.sqrt(np.mean((log.q - log.q_d) ** 2)))
    vel = float(np.sqrt(np.mean((log.dq - log.dq_d) ** 2)))
    max_tau = float(np.max(np.abs(log.tau_m)))
    print(f"pos_rmse={pos}")
    print(f"vel_rmse={vel}")
    print(f"max_tau={max_tau}")
    return EXIT_OK


def cli_main(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with code 2
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"flexmpc: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
