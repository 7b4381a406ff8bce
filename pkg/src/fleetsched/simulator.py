"""Discrete-time execution of a schedule with per-robot planner + MPC.

Each step runs three phases: every active robot's planner produces a
desired speed and local reference, the controllers solve their horizon
problems against the neighbor plans broadcast on the previous step, and
the unicycle states are integrated.  Node arrivals are logged the first
time a robot enters the arrival disc of its next pending scheduled node,
which is also how delays (actual minus scheduled arrival time) are
measured.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from fleetsched.capacity_scheduler import Schedule
from fleetsched.environment import Scenario
from fleetsched.local_planner import LocalPlanner, precompute_global
from fleetsched.mpc import (
    NeighborPlan,
    NonFiniteError,
    RobotState,
    motion_model,
    polygon_signed_distance,
    shift_warm_start,
    solve_mpc,
)


@dataclass
class SimConfig:
    r_node: float = 0.6  # arrival disc radius around a scheduled node
    max_steps: int | None = None  # default: 1.5x horizon plus a minute
    deadlock_window: float = 20.0  # seconds of no progress that count as stuck
    progress_eps: float = 0.05  # meters of path progress below which we call it none


@dataclass(frozen=True)
class ArrivalEvent:
    vehicle: str
    node: str
    seq_index: int
    scheduled_time: float
    actual_time: float

    @property
    def delay(self) -> float:
        return self.actual_time - self.scheduled_time


@dataclass
class SimLog:
    dt: float
    vehicles: list[str]
    steps: int = 0
    completed: bool = False
    arrivals: list[ArrivalEvent] = field(default_factory=list)
    # trace rows: (step, vehicle, x, y, theta, v, omega)
    trace: list[tuple] = field(default_factory=list)
    positions: np.ndarray | None = None  # (steps+1, n_vehicles, 2)
    min_separation: np.ndarray | None = None  # (steps+1,)
    progress: dict[str, list[float]] = field(default_factory=dict)  # arc length along own path
    lateness: dict[str, list[float]] = field(default_factory=dict)  # t minus pending node's scheduled time
    planner_trace: dict[str, list[tuple]] = field(default_factory=dict)  # (step, speed, anchor)
    mpc_trace: dict[str, list[tuple]] = field(default_factory=dict)  # (step, iterations, cost)
    parked_step: dict[str, int] = field(default_factory=dict)
    fallback_count: int = 0


@dataclass
class DeadlockInterval:
    vehicle: str
    t_start: float
    t_end: float


@dataclass
class SafetyAudit:
    min_separation: float
    min_obstacle_distance: float
    deadlocks: list[DeadlockInterval]
    separation_floor: float  # 2x the largest footprint radius

    @property
    def ok(self) -> bool:
        return (
            self.min_separation >= self.separation_floor
            and self.min_obstacle_distance > 0.0
            and not self.deadlocks
        )


def run(scenario: Scenario, schedule: Schedule, config: SimConfig | None = None) -> SimLog:
    """Simulate until every robot is parked at its final node, or a step cap."""
    config = config or SimConfig()
    dt = scenario.sim_dt
    params = scenario.mpc_params
    graph = scenario.graph
    by_vehicle = schedule.by_vehicle()
    vehicles = sorted(by_vehicle)
    if config.max_steps is None:
        max_steps = int(1.5 * scenario.horizon / dt) + int(60.0 / dt)
    else:
        max_steps = config.max_steps

    planners: dict[str, LocalPlanner] = {}
    states: dict[str, RobotState] = {}
    u_prev: dict[str, np.ndarray] = {}
    warm: dict[str, np.ndarray] = {}
    plans: dict[str, np.ndarray] = {}
    pending: dict[str, int] = {}
    parked: dict[str, bool] = {}
    node_pos: dict[str, list[tuple[float, float]]] = {}
    reach: dict[str, float] = {}

    log = SimLog(dt=dt, vehicles=vehicles)

    for vid in vehicles:
        entries = by_vehicle[vid]
        vehicle = scenario.vehicles[vid]
        traj = precompute_global(entries, graph, vehicle.max_speed, dt)
        planners[vid] = LocalPlanner(
            traj,
            [e.time for e in entries],
            params.n_horizon,
            scenario.planner_params,
            nominal_speed=vehicle.nominal_speed,
        )
        x0, y0, h0 = traj.points[0]
        states[vid] = RobotState(x=x0, y=y0, heading=h0)
        u_prev[vid] = np.zeros(2)
        warm[vid] = np.zeros((params.n_horizon, 2))
        plans[vid] = np.tile([x0, y0], (params.n_horizon, 1))
        pending[vid] = 0
        parked[vid] = False
        node_pos[vid] = [graph.position(e.node) for e in entries]
        reach[vid] = params.n_horizon * dt * vehicle.max_speed
        log.progress[vid] = []
        log.lateness[vid] = []
        log.planner_trace[vid] = []
        log.mpc_trace[vid] = []

    obstacle_boxes = []
    for poly in scenario.obstacles:
        arr = np.asarray(poly.vertices, dtype=float)
        obstacle_boxes.append((arr.min(axis=0), arr.max(axis=0), poly))

    def obstacles_near(pos: tuple[float, float], radius: float):
        out = []
        for lo, hi, poly in obstacle_boxes:
            dx = max(lo[0] - pos[0], 0.0, pos[0] - hi[0])
            dy = max(lo[1] - pos[1], 0.0, pos[1] - hi[1])
            if math.hypot(dx, dy) <= radius:
                out.append(poly)
        return out

    def record_arrivals(vid: str, t: float) -> None:
        entries = by_vehicle[vid]
        s = states[vid]
        while pending[vid] < len(entries):
            idx = pending[vid]
            px, py = node_pos[vid][idx]
            if math.hypot(s.x - px, s.y - py) > config.r_node:
                break
            log.arrivals.append(
                ArrivalEvent(
                    vehicle=vid,
                    node=entries[idx].node,
                    seq_index=idx,
                    scheduled_time=entries[idx].time,
                    actual_time=t,
                )
            )
            pending[vid] += 1
        if pending[vid] >= len(entries) and not parked[vid]:
            parked[vid] = True
            log.parked_step[vid] = log.steps

    def pending_lateness(vid: str, t: float) -> float:
        entries = by_vehicle[vid]
        if pending[vid] >= len(entries):
            return 0.0
        return t - entries[pending[vid]].time

    positions_hist = [np.array([[states[v].x, states[v].y] for v in vehicles])]
    for vid in vehicles:
        record_arrivals(vid, 0.0)
        log.progress[vid].append(0.0)
        log.lateness[vid].append(pending_lateness(vid, 0.0))

    step = 0
    while step < max_steps and not all(parked.values()):
        t = step * dt

        refs: dict[str, object] = {}
        for vid in vehicles:
            if parked[vid]:
                continue
            ref, info = planners[vid].step((states[vid].x, states[vid].y), t)
            refs[vid] = ref
            log.planner_trace[vid].append((step, info["speed"], info["anchor"]))

        new_plans: dict[str, np.ndarray] = {}
        actions: dict[str, np.ndarray] = {}
        for vid in vehicles:
            s = states[vid]
            if parked[vid]:
                actions[vid] = np.zeros(2)
                new_plans[vid] = np.tile([s.x, s.y], (params.n_horizon, 1))
                continue
            neighbors = []
            for other in vehicles:
                if other == vid:
                    continue
                so = states[other]
                if math.hypot(s.x - so.x, s.y - so.y) <= reach[vid] + reach[other] + params.d_fleet + 1.0:
                    shifted = np.vstack([plans[other][1:], plans[other][-1:]])
                    neighbors.append(NeighborPlan(vehicle=other, positions=shifted))
            near_obs = obstacles_near((s.x, s.y), reach[vid] + params.obstacle_inflation + 1.0)
            try:
                sol = solve_mpc(s, u_prev[vid], refs[vid], neighbors, near_obs, params, warm_start=warm[vid])
                actions[vid] = sol.actions[0]
                warm[vid] = shift_warm_start(sol.actions)
                new_plans[vid] = sol.positions
                log.mpc_trace[vid].append((step, sol.iterations, sol.cost))
            except NonFiniteError:
                # brake: speed toward zero at maximum deceleration, spin likewise
                log.fallback_count += 1
                v_brk = max(0.0, u_prev[vid][0] + params.du_min[0] * dt)
                om = u_prev[vid][1]
                om_brk = max(om + params.du_min[1] * dt, 0.0) if om > 0 else min(om + params.du_max[1] * dt, 0.0)
                actions[vid] = np.array([v_brk, om_brk])
                warm[vid] = np.tile(actions[vid], (params.n_horizon, 1))
                new_plans[vid] = np.tile([s.x, s.y], (params.n_horizon, 1))

        t_next = (step + 1) * dt
        for vid in vehicles:
            if not parked[vid]:
                states[vid] = motion_model(states[vid], tuple(actions[vid]), dt)
                u_prev[vid] = actions[vid]
            plans[vid] = new_plans[vid]
            s = states[vid]
            log.trace.append((step, vid, s.x, s.y, s.heading, actions[vid][0], actions[vid][1]))
            record_arrivals(vid, t_next)
            planner = planners[vid]
            log.progress[vid].append(float(planner.traj.cumdist[planner.anchor]))
            log.lateness[vid].append(pending_lateness(vid, t_next))

        positions_hist.append(np.array([[states[v].x, states[v].y] for v in vehicles]))
        step += 1
        log.steps = step

    log.completed = all(parked.values())
    log.positions = np.stack(positions_hist)
    if len(vehicles) >= 2:
        diff = log.positions[:, :, None, :] - log.positions[:, None, :, :]
        dist = np.sqrt(np.sum(diff * diff, axis=3))
        iu = np.triu_indices(len(vehicles), k=1)
        log.min_separation = dist[:, iu[0], iu[1]].min(axis=1)
    else:
        log.min_separation = np.full(len(positions_hist), np.inf)
    return log


# ---------------------------------------------------------------------------
# reporting


@dataclass
class VehicleDelaySummary:
    vehicle: str
    count: int
    mean_delay: float
    max_delay: float
    min_delay: float


@dataclass
class DelayReport:
    events: list[ArrivalEvent]
    summaries: list[VehicleDelaySummary]
    # per-vehicle histogram: sorted {bucket_lower_bound_s: count} with 1 s bins
    buckets: dict[str, dict[int, int]]


def delay_report(log: SimLog) -> DelayReport:
    """Aggregate arrival delays per vehicle (series, summary, histogram)."""
    if not log.arrivals:
        raise ValueError("empty simulation log")
    by_vehicle: dict[str, list[ArrivalEvent]] = {}
    for event in log.arrivals:
        by_vehicle.setdefault(event.vehicle, []).append(event)
    summaries = []
    buckets: dict[str, dict[int, int]] = {}
    for vid in sorted(by_vehicle):
        delays = [e.delay for e in by_vehicle[vid]]
        summaries.append(
            VehicleDelaySummary(
                vehicle=vid,
                count=len(delays),
                mean_delay=sum(delays) / len(delays),
                max_delay=max(delays),
                min_delay=min(delays),
            )
        )
        hist: dict[int, int] = {}
        for d in delays:
            bucket = math.floor(d)
            hist[bucket] = hist.get(bucket, 0) + 1
        buckets[vid] = dict(sorted(hist.items()))
    return DelayReport(events=list(log.arrivals), summaries=summaries, buckets=buckets)


def safety_audit(log: SimLog, scenario: Scenario, config: SimConfig | None = None) -> SafetyAudit:
    """Post-hoc safety checks: separation, obstacle clearance, deadlocks."""
    config = config or SimConfig()
    if log.positions is None:
        raise ValueError("empty simulation log")
    min_sep = float(np.min(log.min_separation)) if log.min_separation is not None else float("inf")

    min_obs = float("inf")
    flat = log.positions.reshape(-1, 2)
    for poly in scenario.obstacles:
        sd, _ = polygon_signed_distance(flat, poly)
        min_obs = min(min_obs, float(np.min(sd)))

    # a robot counts as stuck when it makes no path progress over the whole
    # window even though it is running behind its schedule; scheduled holds
    # (waiting for an edge entry slot while still early) are not deadlocks
    window_steps = max(1, int(round(config.deadlock_window / log.dt)))
    deadlocks: list[DeadlockInterval] = []
    for vid in log.vehicles:
        prog = log.progress[vid]
        late = log.lateness[vid]
        end_active = log.parked_step.get(vid, len(prog) - 1)
        stuck_since: int | None = None
        for k in range(1, end_active + 1):
            window_start = k - window_steps
            if window_start < 0:
                continue
            no_progress = prog[k] - prog[window_start] < config.progress_eps
            behind = late[k] > 0.0
            if no_progress and behind:
                if stuck_since is None:
                    stuck_since = window_start
            elif stuck_since is not None:
                deadlocks.append(DeadlockInterval(vehicle=vid, t_start=stuck_since * log.dt, t_end=k * log.dt))
                stuck_since = None
        if stuck_since is not None:
            deadlocks.append(
                DeadlockInterval(vehicle=vid, t_start=stuck_since * log.dt, t_end=end_active * log.dt)
            )

    floor = 2.0 * max(v.footprint_radius for v in scenario.vehicles.values())
    return SafetyAudit(
        min_separation=min_sep,
        min_obstacle_distance=min_obs,
        deadlocks=deadlocks,
        separation_floor=floor,
    )


# ---------------------------------------------------------------------------
# stable CSV emission (consumed by the report command and the tests)


def arrivals_csv_text(log: SimLog) -> str:
    lines = ["vehicle,node,seq_index,scheduled_s,actual_s,delay_s"]
    for e in log.arrivals:
        lines.append(
            f"{e.vehicle},{e.node},{e.seq_index},{e.scheduled_time:.6f},{e.actual_time:.6f},{e.delay:.6f}"
        )
    return "\n".join(lines) + "\n"


def trace_csv_text(log: SimLog) -> str:
    lines = ["step,vehicle,x,y,theta,v,omega"]
    for step, vid, x, y, th, v, om in log.trace:
        lines.append(f"{step},{vid},{x:.6f},{y:.6f},{th:.6f},{v:.6f},{om:.6f}")
    return "\n".join(lines) + "\n"


def audit_csv_text(audit: SafetyAudit) -> str:
    lines = ["kind,vehicle,value,detail"]
    lines.append(f"min_separation,,{audit.min_separation:.6f},floor={audit.separation_floor:.6f}")
    lines.append(f"min_obstacle_distance,,{audit.min_obstacle_distance:.6f},")
    for d in audit.deadlocks:
        lines.append(f"deadlock,{d.vehicle},{d.t_start:.2f},until={d.t_end:.2f}")
    return "\n".join(lines) + "\n"


def planner_trace_csv_text(log: SimLog) -> str:
    """Per-step planner diagnostics (commanded speed and anchor index)."""
    lines = ["step,vehicle,desired_speed,anchor"]
    for vid in log.vehicles:
        for step, speed, anchor in log.planner_trace[vid]:
            lines.append(f"{step},{vid},{speed:.6f},{anchor}")
    return "\n".join(lines) + "\n"


def mpc_trace_csv_text(log: SimLog) -> str:
    """Per-solve controller diagnostics (iterations and final cost)."""
    lines = ["step,vehicle,iterations,cost"]
    for vid in log.vehicles:
        for step, iterations, cost in log.mpc_trace[vid]:
            lines.append(f"{step},{vid},{iterations},{cost:.6f}")
    return "\n".join(lines) + "\n"
