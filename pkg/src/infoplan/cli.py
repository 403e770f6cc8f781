"""Command-line entry points and machine-readable result files.

Subcommands:

* ``plan``     solve one scenario and write ``trajectory.json``,
               ``iterations.csv``, and ``summary.json``;
* ``sweep``    solve across a homotopy grid and write ``pareto.csv``;
* ``evaluate`` run the covariance analysis on a stored trajectory and
               write ``crlb.csv``;
* ``nodes``    print the planning time grid.

Exit codes: 0 success, 2 usage or validation error, 3 I/O error, 4 solver
failure. The ``INFOPLAN_LOG`` environment variable sets the log level.
Every emitted column carries its unit in the header; normalized and SI
values never share a column.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .discretization import TrajectoryIterate
from .dynamics import TimeGrid
from .evaluation import crlb_run, pareto_sweep, terminal_rms, total_impulse
from .scenario import Scenario, ScenarioError, load_scenario
from . import scvx

__all__ = [
    "TRAJECTORY_FORMAT_VERSION",
    "main",
    "cmd_plan",
    "cmd_sweep",
    "cmd_evaluate",
    "cmd_nodes",
    "write_trajectory",
    "read_trajectory",
]

logger = logging.getLogger("infoplan.cli")

TRAJECTORY_FORMAT_VERSION = 1

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_SOLVER = 4


def _fmt(value: float) -> str:
    return repr(float(value))


def _configure_logging():
    level_name = os.environ.get("INFOPLAN_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        try:
            level = int(level_name)
        except ValueError:
            level = logging.WARNING
    logging.basicConfig(level=level,
                        format="%(asctime)s %(name)s %(message)s")


# ---------------------------------------------------------------------------
# Trajectory interchange format


def write_trajectory(path, iterate: TrajectoryIterate, scenario: Scenario,
                     extra: dict | None = None) -> None:
    """Versioned JSON dump of a trajectory, in normalized and SI units."""
    params = scenario.params
    nodes = []
    for k, t in enumerate(iterate.grid.nodes):
        state = iterate.states[k]
        control = iterate.controls[k]
        nodes.append({
            "t_tu": float(t),
            "t_days": float(params.tu_to_s(t) / 86400.0),
            "state_du": [float(v) for v in state],
            "position_km": [float(v) for v in params.du_to_km(state[:3])],
            "velocity_km_s": [float(v) for v in params.vu_to_kmps(state[3:])],
            "control_du_tu2": [float(v) for v in control],
            "control_km_s2": [float(v) for v in params.au_to_kmps2(control)],
            "u_max_du_tu": float(iterate.u_max[k]),
            "u_max_impulse_km_s": float(params.vu_to_kmps(iterate.u_max[k])),
        })
    document = {
        "format_version": TRAJECTORY_FORMAT_VERSION,
        "system": {"mu": params.mu, "du_km": params.du_km, "tu_s": params.tu_s},
        "n_targets": scenario.n_targets,
        "nodes": nodes,
    }
    if extra:
        document.update(extra)
    Path(path).write_text(json.dumps(document, indent=1) + "\n")


def read_trajectory(path, scenario: Scenario) -> TrajectoryIterate:
    """Load a trajectory file, checking version and dimensions."""
    try:
        document = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"malformed trajectory file {path}: {exc}") from exc
    if not isinstance(document, dict) or "format_version" not in document:
        raise ScenarioError(f"{path} is not a trajectory document")
    if document["format_version"] != TRAJECTORY_FORMAT_VERSION:
        raise ScenarioError(
            f"unsupported trajectory format version {document['format_version']}"
        )
    if document.get("n_targets") != scenario.n_targets:
        raise ScenarioError(
            "trajectory/config dimension mismatch: "
            f"{document.get('n_targets')} targets in the file, "
            f"{scenario.n_targets} in the scenario"
        )
    node_list = document["nodes"]
    try:
        nodes = np.array([n["t_tu"] for n in node_list], dtype=float)
        states = np.array([n["state_du"] for n in node_list], dtype=float)
        controls = np.array([n["control_du_tu2"] for n in node_list], dtype=float)
        u_max = np.array([n["u_max_du_tu"] for n in node_list], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"malformed trajectory node table: {exc}") from exc
    if states.shape != (nodes.size, 6) or controls.shape != (nodes.size, 3):
        raise ScenarioError("trajectory node table has inconsistent dimensions")
    return TrajectoryIterate(TimeGrid(nodes), states, controls, u_max)


# ---------------------------------------------------------------------------
# Commands


def _prepare_out_dir(out_dir) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise IOError(f"output directory {out} is not writable: {exc}") from exc
    return out


def _write_iterations_csv(path, history) -> None:
    lines = ["iteration,J,L,rho,eta,max_defect,accepted"]
    for rec in history:
        lines.append(
            f"{rec.iteration},{_fmt(rec.j_candidate)},{_fmt(rec.l_candidate)},"
            f"{_fmt(rec.rho)},{_fmt(rec.eta)},{_fmt(rec.max_defect)},"
            f"{int(rec.accepted)}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def _resolve_alpha(scenario: Scenario, alpha: float | None) -> float:
    if alpha is None:
        alpha = scenario.alpha_h
    if alpha is None:
        raise ScenarioError("no homotopy weight: pass --alpha or set alpha_h "
                            "in the config")
    if not 0.0 <= alpha <= 1.0:
        raise ScenarioError(f"alpha must lie in [0, 1], got {alpha}")
    return float(alpha)


def cmd_plan(config_path, alpha: float | None, out_dir) -> int:
    scenario = load_scenario(config_path)
    alpha = _resolve_alpha(scenario, alpha)
    out = _prepare_out_dir(out_dir)

    report = scvx.solve(scenario, alpha_h=alpha)
    history = crlb_run(report.iterate, scenario)
    rms = terminal_rms(history, scenario)
    impulse_km_s = total_impulse(report.iterate, scenario.params)
    duration_days = float(scenario.params.tu_to_s(scenario.duration)) / 86400.0

    write_trajectory(out / "trajectory.json", report.iterate, scenario,
                     extra={"alpha_h": alpha, "converged": report.converged})
    _write_iterations_csv(out / "iterations.csv", report.history)
    summary = {
        "alpha_h": alpha,
        "converged": report.converged,
        "iterations": report.iterations,
        "total_impulse_km_s": impulse_km_s,
        "avg_impulse_km_s_per_day": impulse_km_s / duration_days,
        "mutual_information_nats": report.mutual_information,
        "max_defect_du": report.max_defect,
        "terminal_rms_km": {
            "observer": float(rms[0]),
            "targets": [float(v) for v in rms[1:]],
        },
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    print(f"plan: alpha_h={alpha} converged={report.converged} "
          f"iterations={report.iterations} "
          f"impulse={impulse_km_s * 1e3:.4f} m/s "
          f"MI={report.mutual_information:.4f} nats")
    if not report.converged:
        logger.warning("planner did not converge within max_iters")
        return EXIT_SOLVER
    return EXIT_OK


def cmd_sweep(config_path, alphas, out_dir) -> int:
    scenario = load_scenario(config_path)
    if not alphas:
        raise ScenarioError("empty homotopy grid")
    for alpha in alphas:
        if not 0.0 <= alpha <= 1.0:
            raise ScenarioError(f"alpha must lie in [0, 1], got {alpha}")
    out = _prepare_out_dir(out_dir)

    points = pareto_sweep(scenario, alphas)
    header = ["alpha_h", "total_impulse_km_s", "avg_impulse_km_s_per_day",
              "rms_observer_km"]
    header += [f"rms_target_{i + 1}_km" for i in range(scenario.n_targets)]
    header += ["converged", "failure"]
    lines = [",".join(header)]
    for point in points:
        row = [_fmt(point.alpha_h), _fmt(point.total_impulse_km_s),
               _fmt(point.avg_impulse_km_s_per_day),
               _fmt(point.terminal_rms_km[0])]
        row += [_fmt(v) for v in point.terminal_rms_km[1:]]
        row.append(str(int(point.converged)))
        row.append("" if point.failure is None else point.failure.replace(",", ";"))
        lines.append(",".join(row))
    (out / "pareto.csv").write_text("\n".join(lines) + "\n")
    n_converged = sum(point.converged for point in points)
    print(f"sweep: {n_converged}/{len(points)} points converged -> "
          f"{out / 'pareto.csv'}")
    return EXIT_OK if n_converged >= 1 else EXIT_SOLVER


def cmd_evaluate(config_path, trajectory_path, out_dir) -> int:
    scenario = load_scenario(config_path)
    trajectory = read_trajectory(trajectory_path, scenario)
    out = _prepare_out_dir(out_dir)
    try:
        history = crlb_run(trajectory, scenario)
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc

    n_obj = scenario.n_targets + 1
    params = scenario.params
    names = ["observer"] + [f"target_{i + 1}" for i in range(scenario.n_targets)]
    header = ["epoch_tu", "epoch_days", "is_measurement"]
    for name in names:
        header += [f"rms_pre_{name}_km", f"rms_post_{name}_km"]
    lines = [",".join(header)]
    for k, t in enumerate(history.epochs):
        row = [_fmt(t), _fmt(params.tu_to_s(t) / 86400.0),
               str(int(history.is_measurement[k]))]
        for o in range(n_obj):
            sl = slice(6 * o, 6 * o + 3)
            rms_pre = float(params.du_to_km(
                np.sqrt(np.trace(history.pre_update[k][sl, sl]))))
            rms_post = float(history.rms_position_km[k, o])
            row += [_fmt(rms_pre), _fmt(rms_post)]
        lines.append(",".join(row))
    (out / "crlb.csv").write_text("\n".join(lines) + "\n")
    rms = terminal_rms(history, scenario)
    print("evaluate: terminal rms [km] observer="
          f"{rms[0]:.6f} targets={[round(float(v), 6) for v in rms[1:]]}")
    return EXIT_OK


def cmd_nodes(config_path) -> int:
    scenario = load_scenario(config_path)
    grid, windows, zero_thrust = scvx.build_grid(scenario)
    meas_epochs = set()
    for window in windows:
        meas_epochs.update(np.round(window.measurement_epochs(scenario.params), 12))
    print(f"# {len(grid)} nodes, sigma={scenario.sigma}, "
          f"duration={scenario.duration:.9f} TU")
    print("index  t_tu              t_days      dt_tu       zero_thrust  measurement")
    dts = np.concatenate((grid.intervals, [np.nan]))
    for k, t in enumerate(grid.nodes):
        days = scenario.params.tu_to_s(t) / 86400.0
        is_meas = int(round(t, 12) in meas_epochs)
        print(f"{k:5d}  {t:<16.12f}  {days:9.5f}  {dts[k]:10.7f}  "
              f"{int(zero_thrust[k]):11d}  {is_meas:11d}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="infoplan",
        description="Information-driven low-thrust trajectory planning in "
                    "the Earth-Moon three-body problem",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    plan = sub.add_parser("plan", help="solve one scenario")
    plan.add_argument("--config", required=True, help="scenario file or "
                      "bundled name (testcase1, testcase2)")
    plan.add_argument("--alpha", type=float, default=None,
                      help="homotopy weight override in [0, 1]")
    plan.add_argument("--out", required=True, help="output directory")

    sweep = sub.add_parser("sweep", help="Pareto sweep over homotopy weights")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--alphas", required=True,
                       help="comma-separated weights, e.g. 0,5e-3,1e-2")
    sweep.add_argument("--out", required=True)

    evaluate = sub.add_parser("evaluate", help="covariance analysis of a "
                              "stored trajectory")
    evaluate.add_argument("--config", required=True)
    evaluate.add_argument("--trajectory", required=True)
    evaluate.add_argument("--out", required=True)

    nodes = sub.add_parser("nodes", help="print the planning time grid")
    nodes.add_argument("--config", required=True)
    return parser


def main(argv=None) -> int:
    _configure_logging()
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "plan":
            return cmd_plan(args.config, args.alpha, args.out)
        if args.command == "sweep":
            try:
                alphas = [float(a) for a in args.alphas.split(",") if a.strip()]
            except ValueError as exc:
                raise ScenarioError(f"cannot parse --alphas: {exc}") from exc
            return cmd_sweep(args.config, alphas, args.out)
        if args.command == "evaluate":
            return cmd_evaluate(args.config, args.trajectory, args.out)
        if args.command == "nodes":
            return cmd_nodes(args.config)
        parser.error(f"unknown command {args.command!r}")
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except IOError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except scvx.ScvxError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
