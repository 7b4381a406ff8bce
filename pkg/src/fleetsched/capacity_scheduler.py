"""Capacity verification and the full scheduling loop.

Routes are encoded as a disjunctive temporal problem: real arrival
variables (one per node occurrence along each route) and edge-entry
variables (one per traversed edge), chained by travel-time equalities,
bounded by task windows and the horizon, and coupled across routes by
three families of two-way disjunctions:

  (1) node exclusion  - of two vehicles whose paths share a node, one must
      arrive there no earlier than the safety margin after the other
      entered its own incoming edge;
  (2) narrow-edge trailing - entries of two vehicles into the same narrow
      edge must differ by at least the safety margin;
  (3) narrow-edge head-on - a vehicle may enter a narrow edge only after an
      opposing vehicle has fully cleared it, plus the safety margin.

The solver does chronological backtracking over the disjunctions with
incremental propagation of the difference constraints (earliest-time
closure with positive-cycle and bound violation detection), so a feasible
outcome is always the earliest-time schedule and is deterministic.  On
infeasibility, legs are rerouted one at a time through next-shortest
loopless paths; when alternatives run out, the route set is tabu-listed
and routing restarts.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from fleetsched.environment import Graph, Scenario
from fleetsched.routing import (
    Path,
    PathTable,
    Route,
    RouteSet,
    RoutingInfeasible,
    all_pairs_shortest_paths,
    effective_stop_times,
    k_shortest_paths,
    plan_routes,
    route_set_full_sequences,
    route_set_stop_indices,
)

TIME_EPS = 1e-6


class SchedulingInfeasible(Exception):
    """The scheduling problem is infeasible (routing has no solution)."""

    def __init__(self, cause: RoutingInfeasible):
        self.cause = cause
        super().__init__(str(cause))


class IterationLimitReached(Exception):
    """The scheduler loop cap was hit without proving (in)feasibility."""


class AlternativesExhausted(Exception):
    """Every path combination within the per-leg budget has been tried."""


@dataclass(frozen=True)
class ScheduleEntry:
    vehicle: str
    node: str
    time: float


@dataclass
class Schedule:
    entries: list[ScheduleEntry]

    def by_vehicle(self) -> dict[str, list[ScheduleEntry]]:
        out: dict[str, list[ScheduleEntry]] = {}
        for entry in self.entries:
            out.setdefault(entry.vehicle, []).append(entry)
        return out

    def for_vehicle(self, vehicle: str) -> list[ScheduleEntry]:
        return [e for e in self.entries if e.vehicle == vehicle]


@dataclass(frozen=True)
class DiffConstraint:
    """hi - lo >= gap, over DTP variable indices."""

    hi: int
    lo: int
    gap: float
    label: str = ""


@dataclass(frozen=True)
class Disjunction:
    first: DiffConstraint
    second: DiffConstraint
    family: str  # "node-exclusion" | "edge-trailing" | "edge-head-on"
    resource: tuple


@dataclass
class DisjunctiveTemporalProblem:
    var_keys: list[tuple]  # ("arrival", vehicle, occ) or ("entry", vehicle, step)
    lower: list[float]
    upper: list[float]
    constraints: list[DiffConstraint]
    disjunctions: list[Disjunction]

    def var_index(self) -> dict[tuple, int]:
        return {key: i for i, key in enumerate(self.var_keys)}


@dataclass
class Violation:
    family: str  # "node-exclusion" | "edge-trailing" | "edge-head-on" | "chaining" | "window" | "horizon"
    vehicles: tuple[str, ...]
    resource: str
    magnitude: float  # seconds short of the requirement

    def __str__(self) -> str:
        who = "/".join(self.vehicles)
        return f"[{self.family}] {who} at {self.resource}: short by {self.magnitude:.3f}s"


@dataclass
class ConflictReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        if self.ok:
            return "no conflicts"
        return "\n".join(str(v) for v in self.violations)


@dataclass
class SchedulerConfig:
    max_iterations: int = 50  # capacity-verification attempts across the whole loop
    path_budget: int = 5  # loopless path alternatives per consecutive stop pair
    wide_edge_mu: bool = False  # also enforce family (2) on wide edges


@dataclass
class ComsatResult:
    schedule: Schedule
    route_set: RouteSet
    iterations: int


# ---------------------------------------------------------------------------
# DTP construction


def _incoming_edge_steps(seq: list[str]) -> list[int | None]:
    """For each occurrence, the step index of the last real edge into it."""
    incoming: list[int | None] = [None] * len(seq)
    last_edge: int | None = None
    for i in range(1, len(seq)):
        if seq[i] != seq[i - 1]:
            last_edge = i - 1
        incoming[i] = last_edge
    return incoming


def _nominal_occurrence_times(seq: list[str], graph: Graph, speed: float) -> list[float]:
    times = [0.0]
    for a, b in zip(seq, seq[1:]):
        dt = 0.0 if a == b else graph.edge(a, b).length / speed
        times.append(times[-1] + dt)
    return times


def build_capacity_problem(route_set: RouteSet, scenario: Scenario, wide_edge_mu: bool = False) -> DisjunctiveTemporalProblem:
    """Encode chaining, windows, precedence and the exclusion disjunctions."""
    graph = scenario.graph
    mu = scenario.safety_margin
    horizon = scenario.horizon
    sequences = route_set_full_sequences(route_set)
    stop_indices = route_set_stop_indices(route_set)
    vehicles = sorted(route_set.routes)

    var_keys: list[tuple] = []
    lower: list[float] = []
    upper: list[float] = []

    def new_var(key: tuple, lo: float, hi: float) -> int:
        var_keys.append(key)
        lower.append(lo)
        upper.append(hi)
        return len(var_keys) - 1

    arrival: dict[tuple[str, int], int] = {}
    entry: dict[tuple[str, int], int] = {}
    for vid in vehicles:
        seq = sequences[vid]
        for occ in range(len(seq)):
            lo, hi = (0.0, 0.0) if occ == 0 else (0.0, horizon)
            arrival[(vid, occ)] = new_var(("arrival", vid, occ), lo, hi)
        for step in range(len(seq) - 1):
            if seq[step] != seq[step + 1]:
                entry[(vid, step)] = new_var(("entry", vid, step), 0.0, horizon)

    # task windows tighten the arrival-variable bounds directly
    task_occurrence: dict[str, tuple[str, int]] = {}
    for vid in vehicles:
        route = route_set.routes[vid]
        for pos, stop in enumerate(route.stops):
            if stop.kind == "task":
                occ = stop_indices[vid][pos]
                task_occurrence[stop.ref] = (vid, occ)
                task = scenario.tasks[stop.ref]
                var = arrival[(vid, occ)]
                lower[var] = max(lower[var], task.window[0])
                upper[var] = min(upper[var], task.window[1])

    constraints: list[DiffConstraint] = []

    def travel_time(vid: str, step: int) -> float:
        seq = sequences[vid]
        return graph.edge(seq[step], seq[step + 1]).length / scenario.vehicles[vid].nominal_speed

    for vid in vehicles:
        seq = sequences[vid]
        for step in range(len(seq) - 1):
            x_here = arrival[(vid, step)]
            x_next = arrival[(vid, step + 1)]
            if seq[step] == seq[step + 1]:
                constraints.append(DiffConstraint(hi=x_next, lo=x_here, gap=0.0, label="chain-wait"))
                constraints.append(DiffConstraint(hi=x_here, lo=x_next, gap=0.0, label="chain-wait"))
                continue
            y = entry[(vid, step)]
            tt = travel_time(vid, step)
            constraints.append(DiffConstraint(hi=y, lo=x_here, gap=0.0, label="chain-depart"))
            constraints.append(DiffConstraint(hi=x_next, lo=y, gap=tt, label="chain-arrive"))
            constraints.append(DiffConstraint(hi=y, lo=x_next, gap=-tt, label="chain-arrive"))

    for tid, (vid, occ) in sorted(task_occurrence.items()):
        for pred in scenario.tasks[tid].predecessors:
            if pred not in task_occurrence:
                continue
            p_vid, p_occ = task_occurrence[pred]
            constraints.append(
                DiffConstraint(hi=arrival[(vid, occ)], lo=arrival[(p_vid, p_occ)], gap=0.0, label="precedence")
            )

    disjunctions: list[Disjunction] = []
    nominal = {vid: _nominal_occurrence_times(sequences[vid], graph, scenario.vehicles[vid].nominal_speed) for vid in vehicles}
    incoming = {vid: _incoming_edge_steps(sequences[vid]) for vid in vehicles}

    def ordered(first: DiffConstraint, second: DiffConstraint, t_first: float, t_second: float, family: str, resource: tuple) -> Disjunction:
        # prefer letting the nominally earlier vehicle go first
        if t_second < t_first - TIME_EPS:
            first, second = second, first
        return Disjunction(first=first, second=second, family=family, resource=resource)

    for i, vid_a in enumerate(vehicles):
        seq_a = sequences[vid_a]
        for vid_b in vehicles[i + 1 :]:
            seq_b = sequences[vid_b]

            # family (1): shared nodes, excluding each route's parked endpoints
            for occ_a in range(1, len(seq_a) - 1):
                in_a = incoming[vid_a][occ_a]
                if in_a is None:
                    continue
                for occ_b in range(1, len(seq_b) - 1):
                    if seq_b[occ_b] != seq_a[occ_a]:
                        continue
                    in_b = incoming[vid_b][occ_b]
                    if in_b is None:
                        continue
                    # "a yields": a arrives only after b entered its incoming edge + mu
                    a_yields = DiffConstraint(
                        hi=arrival[(vid_a, occ_a)], lo=entry[(vid_b, in_b)], gap=mu, label="node-exclusion"
                    )
                    b_yields = DiffConstraint(
                        hi=arrival[(vid_b, occ_b)], lo=entry[(vid_a, in_a)], gap=mu, label="node-exclusion"
                    )
                    disjunctions.append(
                        ordered(
                            b_yields,
                            a_yields,
                            nominal[vid_a][occ_a],
                            nominal[vid_b][occ_b],
                            "node-exclusion",
                            (seq_a[occ_a], vid_a, occ_a, vid_b, occ_b),
                        )
                    )

            # families (2) and (3): shared and opposing directed edges
            edges_a = [(s, (seq_a[s], seq_a[s + 1])) for s in range(len(seq_a) - 1) if seq_a[s] != seq_a[s + 1]]
            edges_b = [(s, (seq_b[s], seq_b[s + 1])) for s in range(len(seq_b) - 1) if seq_b[s] != seq_b[s + 1]]
            for step_a, key_a in edges_a:
                cap = graph.edges[key_a].capacity
                for step_b, key_b in edges_b:
                    if key_b == key_a and (cap == "narrow" or wide_edge_mu):
                        b_trails = DiffConstraint(
                            hi=entry[(vid_b, step_b)], lo=entry[(vid_a, step_a)], gap=mu, label="edge-trailing"
                        )
                        a_trails = DiffConstraint(
                            hi=entry[(vid_a, step_a)], lo=entry[(vid_b, step_b)], gap=mu, label="edge-trailing"
                        )
                        disjunctions.append(
                            ordered(
                                b_trails,
                                a_trails,
                                nominal[vid_a][step_a],
                                nominal[vid_b][step_b],
                                "edge-trailing",
                                (key_a, vid_a, step_a, vid_b, step_b),
                            )
                        )
                    elif key_b == (key_a[1], key_a[0]) and cap == "narrow":
                        clear_a = travel_time(vid_a, step_a) + mu  # phi = mu
                        clear_b = travel_time(vid_b, step_b) + mu
                        b_waits = DiffConstraint(
                            hi=entry[(vid_b, step_b)], lo=entry[(vid_a, step_a)], gap=clear_a, label="edge-head-on"
                        )
                        a_waits = DiffConstraint(
                            hi=entry[(vid_a, step_a)], lo=entry[(vid_b, step_b)], gap=clear_b, label="edge-head-on"
                        )
                        disjunctions.append(
                            ordered(
                                b_waits,
                                a_waits,
                                nominal[vid_a][step_a],
                                nominal[vid_b][step_b],
                                "edge-head-on",
                                (key_a, vid_a, step_a, vid_b, step_b),
                            )
                        )

    return DisjunctiveTemporalProblem(
        var_keys=var_keys,
        lower=lower,
        upper=upper,
        constraints=constraints,
        disjunctions=disjunctions,
    )


# ---------------------------------------------------------------------------
# DTP solver: incremental earliest-time propagation + chronological backtracking


class _DifferenceSystem:
    """Earliest-time closure of 'hi - lo >= gap' constraints with bounds.

    Values only ever move up during propagation, so undo is a trail of
    (variable, previous value) pairs per decision level.  A variable
    dequeued more often than the variable count during one propagation
    signals a positive cycle, i.e. inconsistency.
    """

    def __init__(self, lower: list[float], upper: list[float]):
        self.n = len(lower)
        self.lower = lower
        self.upper = upper
        self.est = list(lower)
        self.static_out: list[list[tuple[int, float]]] = [[] for _ in range(self.n)]
        self.dyn_out: list[list[tuple[int, float]]] = [[] for _ in range(self.n)]
        self.trail: list[list[tuple[int, float]]] = []
        self.dyn_added: list[list[int]] = []

    def add_static(self, c: DiffConstraint) -> None:
        self.static_out[c.lo].append((c.hi, c.gap))

    def push_level(self) -> None:
        self.trail.append([])
        self.dyn_added.append([])

    def pop_level(self) -> None:
        for var, old in reversed(self.trail.pop()):
            self.est[var] = old
        for var in self.dyn_added.pop():
            self.dyn_out[var].pop()

    def add_dynamic(self, c: DiffConstraint) -> bool:
        self.dyn_out[c.lo].append((c.hi, c.gap))
        self.dyn_added[-1].append(c.lo)
        return self._propagate([c.lo])

    def propagate_all(self) -> bool:
        return self._propagate(list(range(self.n)))

    def _propagate(self, seeds: list[int]) -> bool:
        queue = deque(seeds)
        in_queue = [False] * self.n
        for s in seeds:
            in_queue[s] = True
        pops = [0] * self.n
        while queue:
            u = queue.popleft()
            in_queue[u] = False
            pops[u] += 1
            if pops[u] > self.n + 1:
                return False  # positive cycle
            base = self.est[u]
            for v, gap in self.static_out[u]:
                cand = base + gap
                if cand > self.est[v] + 1e-12:
                    if cand > self.upper[v] + 1e-9:
                        return False
                    self.trail[-1].append((v, self.est[v]))
                    self.est[v] = cand
                    if not in_queue[v]:
                        queue.append(v)
                        in_queue[v] = True
            for v, gap in self.dyn_out[u]:
                cand = base + gap
                if cand > self.est[v] + 1e-12:
                    if cand > self.upper[v] + 1e-9:
                        return False
                    self.trail[-1].append((v, self.est[v]))
                    self.est[v] = cand
                    if not in_queue[v]:
                        queue.append(v)
                        in_queue[v] = True
        return True


def solve_dtp(dtp: DisjunctiveTemporalProblem) -> dict[tuple, float] | None:
    """Earliest-time assignment, or None when no disjunct selection works."""
    system = _DifferenceSystem(dtp.lower, dtp.upper)
    for c in dtp.constraints:
        system.add_static(c)
    system.push_level()
    if not system.propagate_all():
        return None

    k = len(dtp.disjunctions)
    choice = [0] * k
    depth = 0
    while depth < k:
        disj = dtp.disjunctions[depth]
        if choice[depth] >= 2:
            choice[depth] = 0
            depth -= 1
            if depth < 0:
                return None
            system.pop_level()
            choice[depth] += 1
            continue
        alt = disj.first if choice[depth] == 0 else disj.second
        system.push_level()
        if system.add_dynamic(alt):
            depth += 1
        else:
            system.pop_level()
            choice[depth] += 1
    return {key: system.est[i] for i, key in enumerate(dtp.var_keys)}


def extract_schedule(assignment: dict[tuple, float], route_set: RouteSet) -> Schedule:
    """Per-vehicle ordered entries along the full node sequence."""
    sequences = route_set_full_sequences(route_set)
    entries: list[ScheduleEntry] = []
    for vid in sorted(route_set.routes):
        for occ, node in enumerate(sequences[vid]):
            entries.append(ScheduleEntry(vehicle=vid, node=node, time=assignment[("arrival", vid, occ)]))
    return Schedule(entries=entries)


# ---------------------------------------------------------------------------
# independent schedule checker


def verify_schedule(schedule: Schedule, route_set: RouteSet, scenario: Scenario) -> ConflictReport:
    """Re-check every constraint family directly from the schedule.

    Edge-entry times are derived from consecutive arrivals (entry =
    next arrival minus travel time), so the check shares no state with the
    solver.  Violations are data, not errors.
    """
    graph = scenario.graph
    mu = scenario.safety_margin
    report = ConflictReport()
    sequences = route_set_full_sequences(route_set)
    stop_indices = route_set_stop_indices(route_set)
    by_vehicle = schedule.by_vehicle()

    times: dict[str, list[float]] = {}
    entries_time: dict[str, list[float | None]] = {}  # per step: derived edge-entry time
    for vid in sorted(route_set.routes):
        seq = sequences[vid]
        sched = by_vehicle.get(vid, [])
        if [e.node for e in sched] != seq:
            report.violations.append(
                Violation(family="chaining", vehicles=(vid,), resource="sequence mismatch", magnitude=float("inf"))
            )
            return report
        t = [e.time for e in sched]
        times[vid] = t
        speed = scenario.vehicles[vid].nominal_speed
        derived: list[float | None] = []
        for step, (a, b) in enumerate(zip(seq, seq[1:])):
            if a == b:
                derived.append(None)
                if t[step + 1] < t[step] - TIME_EPS:
                    report.violations.append(
                        Violation(
                            family="chaining",
                            vehicles=(vid,),
                            resource=f"{a}@{step}",
                            magnitude=t[step] - t[step + 1],
                        )
                    )
                continue
            tt = graph.edge(a, b).length / speed
            y = t[step + 1] - tt
            derived.append(y)
            if y < t[step] - TIME_EPS:
                report.violations.append(
                    Violation(
                        family="chaining",
                        vehicles=(vid,),
                        resource=f"({a},{b})@{step}",
                        magnitude=t[step] - y,
                    )
                )
        entries_time[vid] = derived

    for vid in sorted(route_set.routes):
        for occ, time in enumerate(times[vid]):
            if time < -TIME_EPS or time > scenario.horizon + TIME_EPS:
                report.violations.append(
                    Violation(
                        family="horizon",
                        vehicles=(vid,),
                        resource=f"{sequences[vid][occ]}@{occ}",
                        magnitude=max(-time, time - scenario.horizon),
                    )
                )

    for vid in sorted(route_set.routes):
        route = route_set.routes[vid]
        for pos, stop in enumerate(route.stops):
            if stop.kind != "task":
                continue
            task = scenario.tasks[stop.ref]
            t = times[vid][stop_indices[vid][pos]]
            if t < task.window[0] - TIME_EPS or t > task.window[1] + TIME_EPS:
                report.violations.append(
                    Violation(
                        family="window",
                        vehicles=(vid,),
                        resource=stop.ref,
                        magnitude=max(task.window[0] - t, t - task.window[1]),
                    )
                )

    vehicles = sorted(route_set.routes)
    incoming = {vid: _incoming_edge_steps(sequences[vid]) for vid in vehicles}
    for i, vid_a in enumerate(vehicles):
        seq_a = sequences[vid_a]
        for vid_b in vehicles[i + 1 :]:
            seq_b = sequences[vid_b]

            for occ_a in range(1, len(seq_a) - 1):
                in_a = incoming[vid_a][occ_a]
                if in_a is None:
                    continue
                for occ_b in range(1, len(seq_b) - 1):
                    if seq_b[occ_b] != seq_a[occ_a]:
                        continue
                    in_b = incoming[vid_b][occ_b]
                    if in_b is None:
                        continue
                    slack_a = times[vid_a][occ_a] - (entries_time[vid_b][in_b] + mu)  # a yields
                    slack_b = times[vid_b][occ_b] - (entries_time[vid_a][in_a] + mu)  # b yields
                    if max(slack_a, slack_b) < -TIME_EPS:
                        report.violations.append(
                            Violation(
                                family="node-exclusion",
                                vehicles=(vid_a, vid_b),
                                resource=seq_a[occ_a],
                                magnitude=-max(slack_a, slack_b),
                            )
                        )

            edges_a = [(s, (seq_a[s], seq_a[s + 1])) for s in range(len(seq_a) - 1) if seq_a[s] != seq_a[s + 1]]
            edges_b = [(s, (seq_b[s], seq_b[s + 1])) for s in range(len(seq_b) - 1) if seq_b[s] != seq_b[s + 1]]
            for step_a, key_a in edges_a:
                edge = graph.edges[key_a]
                if edge.capacity != "narrow":
                    continue
                y_a = entries_time[vid_a][step_a]
                for step_b, key_b in edges_b:
                    y_b = entries_time[vid_b][step_b]
                    if key_b == key_a:
                        gap = abs(y_a - y_b)
                        if gap < mu - TIME_EPS:
                            report.violations.append(
                                Violation(
                                    family="edge-trailing",
                                    vehicles=(vid_a, vid_b),
                                    resource=f"({key_a[0]},{key_a[1]})",
                                    magnitude=mu - gap,
                                )
                            )
                    elif key_b == (key_a[1], key_a[0]):
                        clear_a = edge.length / scenario.vehicles[vid_a].nominal_speed + mu
                        clear_b = edge.length / scenario.vehicles[vid_b].nominal_speed + mu
                        ok_b_waits = y_b - (y_a + clear_a)  # b enters after a cleared
                        ok_a_waits = y_a - (y_b + clear_b)
                        if max(ok_b_waits, ok_a_waits) < -TIME_EPS:
                            report.violations.append(
                                Violation(
                                    family="edge-head-on",
                                    vehicles=(vid_a, vid_b),
                                    resource=f"({key_a[0]},{key_a[1]})",
                                    magnitude=-max(ok_b_waits, ok_a_waits),
                                )
                            )
    return report


# ---------------------------------------------------------------------------
# path changing


class PathChanger:
    """Odometer over next-shortest loopless path alternatives per leg.

    Each call to :meth:`next` advances to a new combination of per-leg
    path choices (lexicographic over legs sorted by vehicle then leg
    index), skipping combinations that break battery range or nominal
    timing feasibility.  Raises :class:`AlternativesExhausted` once the
    per-leg budget is depleted for every combination.
    """

    def __init__(self, scenario: Scenario, route_set: RouteSet, budget: int = 5):
        self.scenario = scenario
        self.route_set = route_set
        self.budget = budget
        self.leg_ids: list[tuple[str, int]] = []
        for vid in sorted(route_set.routes):
            for leg_idx in range(len(route_set.legs[vid])):
                self.leg_ids.append((vid, leg_idx))
        self.alternatives: dict[tuple[str, int], list[Path]] = {}
        self.indices = [0] * len(self.leg_ids)
        self.tried: set[tuple] = {tuple(self.indices)}

    def _leg_alternatives(self, leg_id: tuple[str, int]) -> list[Path]:
        if leg_id not in self.alternatives:
            vid, leg_idx = leg_id
            route = self.route_set.routes[vid]
            a = route.stops[leg_idx].node
            b = route.stops[leg_idx + 1].node
            self.alternatives[leg_id] = k_shortest_paths(self.scenario.graph, a, b, self.budget)
        return self.alternatives[leg_id]

    def _advance(self) -> bool:
        for pos in range(len(self.leg_ids)):
            if self.indices[pos] + 1 < len(self._leg_alternatives(self.leg_ids[pos])):
                self.indices[pos] += 1
                for reset in range(pos):
                    self.indices[reset] = 0
                return True
        return False

    def _materialize(self) -> RouteSet | None:
        legs: dict[str, list[Path]] = {vid: list(paths) for vid, paths in self.route_set.legs.items()}
        for (vid, leg_idx), pos in zip(self.leg_ids, self.indices):
            legs[vid][leg_idx] = self._leg_alternatives((vid, leg_idx))[pos]
        total = sum(p.length for paths in legs.values() for p in paths)
        candidate = RouteSet(routes=dict(self.route_set.routes), legs=legs, total_distance=total)
        # rerouted legs must still respect range and nominal timing
        for vid in sorted(candidate.routes):
            vehicle = self.scenario.vehicles[vid]
            leg_dist = 0.0
            for path, stop in zip(candidate.legs[vid], candidate.routes[vid].stops[1:]):
                leg_dist += path.length
                if stop.kind == "depot":
                    if leg_dist > vehicle.range + 1e-9:
                        return None
                    leg_dist = 0.0
            if leg_dist > vehicle.range + 1e-9:
                return None
        stops = {vid: list(candidate.routes[vid].stops) for vid in candidate.routes}
        _, feasible = effective_stop_times(self.scenario, stops, candidate.legs)
        return candidate if feasible else None

    def next(self) -> RouteSet:
        while True:
            if not self._advance():
                raise AlternativesExhausted("path alternatives exhausted for this route set")
            signature = tuple(self.indices)
            if signature in self.tried:
                continue
            self.tried.add(signature)
            candidate = self._materialize()
            if candidate is not None:
                return candidate


# ---------------------------------------------------------------------------
# full loop


def _wide_edge_ties(schedule: Schedule, route_set: RouteSet, scenario: Scenario) -> list[tuple]:
    """Same-direction, exactly-equal entries into a shared wide edge."""
    sequences = route_set_full_sequences(route_set)
    by_vehicle = schedule.by_vehicle()
    graph = scenario.graph
    ties = []
    vehicles = sorted(route_set.routes)
    entry_times: dict[str, list[tuple[int, tuple, float]]] = {}
    for vid in vehicles:
        seq = sequences[vid]
        t = [e.time for e in by_vehicle[vid]]
        rows = []
        for step, (a, b) in enumerate(zip(seq, seq[1:])):
            if a == b:
                continue
            tt = graph.edge(a, b).length / scenario.vehicles[vid].nominal_speed
            rows.append((step, (a, b), t[step + 1] - tt))
        entry_times[vid] = rows
    for i, vid_a in enumerate(vehicles):
        for vid_b in vehicles[i + 1 :]:
            for step_a, key_a, y_a in entry_times[vid_a]:
                if graph.edges[key_a].capacity != "wide":
                    continue
                for step_b, key_b, y_b in entry_times[vid_b]:
                    if key_b == key_a and abs(y_a - y_b) <= 1e-9:
                        ties.append((vid_a, step_a, vid_b, step_b))
    return ties


def comsat_schedule(scenario: Scenario, config: SchedulerConfig | None = None) -> ComsatResult:
    """Full scheduling loop: route, verify capacity, change paths, repeat.

    Returns the earliest-time conflict-free schedule together with the
    route set that produced it.  Raises :class:`SchedulingInfeasible` when
    routing proves the problem impossible and :class:`IterationLimitReached`
    when the loop cap expires first.
    """
    config = config or SchedulerConfig()
    graph = scenario.graph
    endpoints = {v.depot for v in scenario.vehicles.values()} | {t.node for t in scenario.tasks.values()}
    path_table = all_pairs_shortest_paths(graph, endpoints)

    tabu: set[tuple] = set()
    iterations = 0
    while iterations < config.max_iterations:
        try:
            route_set = plan_routes(scenario, path_table, excluded_signatures=frozenset(tabu))
        except RoutingInfeasible as exc:
            if exc.category == "no feasible route combination" and tabu:
                raise IterationLimitReached(
                    f"all untried route sets exhausted after {iterations} capacity iterations"
                ) from exc
            raise SchedulingInfeasible(exc) from exc

        changer = PathChanger(scenario, route_set, budget=config.path_budget)
        current = route_set
        while iterations < config.max_iterations:
            iterations += 1
            result = _attempt(current, scenario, config, iterations)
            if result is not None:
                return result
            try:
                current = changer.next()
            except AlternativesExhausted:
                tabu.add(route_set.signature())
                break
    raise IterationLimitReached(f"no schedule within {config.max_iterations} capacity iterations")


def _attempt(route_set: RouteSet, scenario: Scenario, config: SchedulerConfig, iterations: int) -> ComsatResult | None:
    base = build_capacity_problem(route_set, scenario, wide_edge_mu=config.wide_edge_mu)
    index = base.var_index()
    extra: list[DiffConstraint] = []
    for _ in range(10):  # wide-edge tie-break rounds; each round orders >= 1 pair
        dtp = base if not extra else DisjunctiveTemporalProblem(
            var_keys=base.var_keys,
            lower=base.lower,
            upper=base.upper,
            constraints=base.constraints + extra,
            disjunctions=base.disjunctions,
        )
        assignment = solve_dtp(dtp)
        if assignment is None:
            return None
        schedule = extract_schedule(assignment, route_set)
        ties = _wide_edge_ties(schedule, route_set, scenario)
        if not ties:
            report = verify_schedule(schedule, route_set, scenario)
            if not report.ok:
                raise RuntimeError(f"solver produced a schedule that fails verification:\n{report}")
            return ComsatResult(schedule=schedule, route_set=route_set, iterations=iterations)
        for vid_a, step_a, vid_b, step_b in ties:
            # later vehicle id shifts by the safety margin
            extra.append(
                DiffConstraint(
                    hi=index[("entry", vid_b, step_b)],
                    lo=index[("entry", vid_a, step_a)],
                    gap=scenario.safety_margin,
                    label="wide-tie-break",
                )
            )
    return None


# ---------------------------------------------------------------------------
# serialization


def schedule_csv_text(schedule: Schedule) -> str:
    lines = ["vehicle,node,time_s"]
    for entry in schedule.entries:
        lines.append(f"{entry.vehicle},{entry.node},{entry.time:.6f}")
    return "\n".join(lines) + "\n"


def schedule_document(schedule: Schedule, route_set: RouteSet) -> dict:
    """Structured schedule embedding the routes and chosen paths."""
    by_vehicle = schedule.by_vehicle()
    return {
        "schedule": [
            {
                "vehicle": vid,
                "stops": [
                    {"kind": s.kind, "ref": s.ref, "node": s.node} for s in route_set.routes[vid].stops
                ],
                "legs": [{"nodes": list(p.nodes), "length": p.length} for p in route_set.legs[vid]],
                "entries": [{"node": e.node, "time": e.time} for e in by_vehicle[vid]],
            }
            for vid in sorted(route_set.routes)
        ]
    }


def parse_schedule_document(doc: dict) -> tuple[Schedule, RouteSet]:
    from fleetsched.routing import Stop

    if not isinstance(doc, dict) or "schedule" not in doc:
        raise ValueError("not a schedule document")
    entries: list[ScheduleEntry] = []
    routes: dict[str, Route] = {}
    legs: dict[str, list[Path]] = {}
    for raw in doc["schedule"]:
        vid = raw["vehicle"]
        routes[vid] = Route(
            vehicle=vid,
            stops=tuple(Stop(kind=s["kind"], ref=s["ref"], node=s["node"]) for s in raw["stops"]),
        )
        legs[vid] = [Path(nodes=tuple(p["nodes"]), length=float(p["length"])) for p in raw["legs"]]
        for e in raw["entries"]:
            entries.append(ScheduleEntry(vehicle=vid, node=e["node"], time=float(e["time"])))
    total = sum(p.length for paths in legs.values() for p in paths)
    return Schedule(entries=entries), RouteSet(routes=routes, legs=legs, total_distance=total)
