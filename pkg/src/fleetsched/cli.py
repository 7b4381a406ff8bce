"""Command-line pipeline: schedule, verify, simulate, report.

Exit codes are stable so scripts can tell outcomes apart:
  0  success
  1  I/O, parse or validation error
  2  routing infeasible (certificate on stderr)
  3  scheduler iteration limit reached
  4  schedule fails verification
  5  simulation incomplete (step limit / deadlock)
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from fleetsched import environment
from fleetsched.capacity_scheduler import (
    IterationLimitReached,
    SchedulingInfeasible,
    comsat_schedule,
    parse_schedule_document,
    schedule_csv_text,
    schedule_document,
    verify_schedule,
)
from fleetsched.routing import serialize_route_set
from fleetsched.simulator import (
    SimConfig,
    arrivals_csv_text,
    audit_csv_text,
    delay_report,
    mpc_trace_csv_text,
    planner_trace_csv_text,
    run,
    safety_audit,
    trace_csv_text,
)

log = logging.getLogger("fleetsched")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2
EXIT_ITERATION_LIMIT = 3
EXIT_VERIFY_FAILED = 4
EXIT_INCOMPLETE = 5


def _setup_logging() -> None:
    level_name = os.environ.get("FLEETSCHED_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level_name, logging.WARNING), format="%(levelname)s %(message)s")


def _load_scenario(path: str, args) -> environment.Scenario:
    scenario = environment.load_scenario(path)
    if getattr(args, "mu", None) is not None:
        scenario.safety_margin = args.mu
    if getattr(args, "dt", None) is not None:
        scenario.sim_dt = args.dt
        scenario.mpc_params = dataclasses.replace(scenario.mpc_params, dt=args.dt)
    if getattr(args, "horizon_n", None) is not None:
        scenario.mpc_params = dataclasses.replace(scenario.mpc_params, n_horizon=args.horizon_n)
    return scenario


def _load_schedule_doc(path: str):
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot read schedule document {path}: {exc}") from exc
    return parse_schedule_document(doc)


def cmd_schedule(args) -> int:
    try:
        scenario = _load_scenario(args.scenario, args)
    except environment.ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        result = comsat_schedule(scenario)
    except SchedulingInfeasible as exc:
        print(f"routing infeasible: {exc.cause.category}"
              + (f" for task {exc.cause.task}" if exc.cause.task else ""), file=sys.stderr)
        return EXIT_INFEASIBLE
    except IterationLimitReached as exc:
        print(f"iteration limit: {exc}", file=sys.stderr)
        return EXIT_ITERATION_LIMIT
    (out / "schedule.csv").write_text(schedule_csv_text(result.schedule))
    (out / "schedule.json").write_text(json.dumps(schedule_document(result.schedule, result.route_set), indent=1))
    (out / "routes.json").write_text(json.dumps(serialize_route_set(result.route_set), indent=1))
    log.info("schedule written to %s after %d capacity iterations", out, result.iterations)
    print(f"schedule: {len(result.schedule.entries)} entries for {len(result.route_set.routes)} vehicles")
    return EXIT_OK


def cmd_verify(args) -> int:
    try:
        scenario = _load_scenario(args.scenario, args)
        schedule, route_set = _load_schedule_doc(args.schedule)
    except (environment.ScenarioError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    report = verify_schedule(schedule, route_set, scenario)
    print(report)
    return EXIT_OK if report.ok else EXIT_VERIFY_FAILED


def cmd_simulate(args) -> int:
    try:
        scenario = _load_scenario(args.scenario, args)
        schedule, route_set = _load_schedule_doc(args.schedule)
    except (environment.ScenarioError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    report = verify_schedule(schedule, route_set, scenario)
    if not report.ok:
        print(f"refusing to simulate an invalid schedule:\n{report}", file=sys.stderr)
        return EXIT_VERIFY_FAILED
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = SimConfig(max_steps=args.max_steps)
    sim_log = run(scenario, schedule, config)
    audit = safety_audit(sim_log, scenario, config)
    (out / "arrivals.csv").write_text(arrivals_csv_text(sim_log))
    (out / "trace.csv").write_text(trace_csv_text(sim_log))
    (out / "audit.csv").write_text(audit_csv_text(audit))
    if args.debug:
        (out / "planner_trace.csv").write_text(planner_trace_csv_text(sim_log))
        (out / "mpc_trace.csv").write_text(mpc_trace_csv_text(sim_log))
    print(
        f"simulated {sim_log.steps} steps, {len(sim_log.arrivals)} arrivals, "
        f"min separation {audit.min_separation:.2f} m"
    )
    if not sim_log.completed:
        print("simulation incomplete: step limit reached", file=sys.stderr)
        return EXIT_INCOMPLETE
    return EXIT_OK


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    arrivals = run_dir / "arrivals.csv"
    if not arrivals.is_file():
        print(f"error: {arrivals} not found", file=sys.stderr)
        return EXIT_ERROR
    rows = []
    try:
        lines = arrivals.read_text().strip().splitlines()
        header = lines[0].split(",")
        expected = ["vehicle", "node", "seq_index", "scheduled_s", "actual_s", "delay_s"]
        if header != expected:
            raise ValueError(f"unexpected arrivals header {header}")
        for line in lines[1:]:
            vid, node, seq, sched, actual, delay = line.split(",")
            rows.append((vid, node, int(seq), float(sched), float(actual), float(delay)))
    except (ValueError, IndexError) as exc:
        print(f"error: malformed arrivals.csv: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if not rows:
        print("error: arrivals.csv has no data rows", file=sys.stderr)
        return EXIT_ERROR

    by_vehicle: dict[str, list[tuple]] = {}
    for row in rows:
        by_vehicle.setdefault(row[0], []).append(row)

    series_lines = ["vehicle,seq_index,node,delay_s"]
    hist_lines = ["vehicle,bucket_s,count"]
    table = ["vehicle  arrivals  mean_delay_s  max_delay_s  min_delay_s"]
    for vid in sorted(by_vehicle):
        entries = sorted(by_vehicle[vid], key=lambda r: r[2])
        delays = [r[5] for r in entries]
        for r in entries:
            series_lines.append(f"{vid},{r[2]},{r[1]},{r[5]:.6f}")
        hist: dict[int, int] = {}
        for d in delays:
            bucket = int(d // 1)
            hist[bucket] = hist.get(bucket, 0) + 1
        for bucket in sorted(hist):
            hist_lines.append(f"{vid},{bucket},{hist[bucket]}")
        table.append(
            f"{vid:8s} {len(delays):8d} {sum(delays) / len(delays):13.3f} {max(delays):12.3f} {min(delays):12.3f}"
        )

    (run_dir / "delay_series.csv").write_text("\n".join(series_lines) + "\n")
    (run_dir / "delay_hist.csv").write_text("\n".join(hist_lines) + "\n")
    summary = "\n".join(table) + "\n"
    (run_dir / "delay_summary.txt").write_text(summary)
    print(summary, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fleetsched", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_sched = sub.add_parser("schedule", help="compute a conflict-free schedule for a scenario")
    p_sched.add_argument("--scenario", required=True)
    p_sched.add_argument("--out", required=True)
    p_sched.add_argument("--mu", type=float, default=None, help="override the safety margin (s)")
    p_sched.add_argument("--dt", type=float, default=None, help="override the sampling time (s)")
    p_sched.add_argument("--horizon-n", type=int, default=None, dest="horizon_n",
                         help="override the MPC horizon length")
    p_sched.set_defaults(func=cmd_schedule)

    p_verify = sub.add_parser("verify", help="check a schedule against every constraint family")
    p_verify.add_argument("--scenario", required=True)
    p_verify.add_argument("--schedule", required=True, help="schedule.json from the schedule command")
    p_verify.add_argument("--mu", type=float, default=None)
    p_verify.set_defaults(func=cmd_verify)

    p_sim = sub.add_parser("simulate", help="execute a schedule in the 2D simulation")
    p_sim.add_argument("--scenario", required=True)
    p_sim.add_argument("--schedule", required=True)
    p_sim.add_argument("--out", required=True)
    p_sim.add_argument("--max-steps", type=int, default=None, dest="max_steps")
    p_sim.add_argument("--mu", type=float, default=None)
    p_sim.add_argument("--dt", type=float, default=None)
    p_sim.add_argument("--horizon-n", type=int, default=None, dest="horizon_n")
    p_sim.add_argument("--debug", action="store_true",
                       help="also dump planner and controller traces as CSV")
    p_sim.set_defaults(func=cmd_simulate)

    p_rep = sub.add_parser("report", help="delay series and distributions from a simulation run")
    p_rep.add_argument("run_dir")
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
