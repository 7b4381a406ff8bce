"""Independent reference implementations used only for checking.

Everything here is deliberately written from scratch against the same
definitions as the production code, using different algorithms where the
production side has one (all-pairs relaxation instead of per-source
Dijkstra, exhaustive enumeration instead of branch and bound, Bellman-Ford
consistency instead of incremental propagation, closed forms instead of
numerics).
"""

from __future__ import annotations

import itertools
import math


def floyd_warshall(graph) -> dict[tuple[str, str], float]:
    """All-pairs shortest distances by full relaxation."""
    nodes = sorted(graph.nodes)
    dist = {(a, b): math.inf for a in nodes for b in nodes}
    for node in nodes:
        dist[(node, node)] = 0.0
    for (tail, head), edge in graph.edges.items():
        dist[(tail, head)] = min(dist[(tail, head)], edge.length)
    for mid in nodes:
        for a in nodes:
            for b in nodes:
                via = dist[(a, mid)] + dist[(mid, b)]
                if via < dist[(a, b)]:
                    dist[(a, b)] = via
    return dist


# ---------------------------------------------------------------------------
# disjunctive temporal problems


def _consistent(n_vars, lower, upper, constraints) -> bool:
    """Bellman-Ford feasibility of difference constraints plus bounds.

    Constraints are (hi, lo, gap) meaning t[hi] - t[lo] >= gap.  Encoded as
    x_lo - x_hi <= -gap over a graph with a virtual origin; feasible iff no
    negative cycle.
    """
    # edges (u, v, w) meaning x_v <= x_u + w; origin is index n_vars
    origin = n_vars
    edges = []
    for i in range(n_vars):
        edges.append((origin, i, upper[i]))  # x_i <= origin + upper
        edges.append((i, origin, -lower[i]))  # origin <= x_i - lower
    for hi, lo, gap in constraints:
        edges.append((hi, lo, -gap))  # x_lo <= x_hi - gap
    dist = [0.0] * (n_vars + 1)
    for _ in range(n_vars + 1):
        changed = False
        for u, v, w in edges:
            if dist[u] + w < dist[v] - 1e-9:
                dist[v] = dist[u] + w
                changed = True
        if not changed:
            return True
    return False


def brute_force_dtp(dtp) -> bool:
    """Feasibility by enumerating every disjunct selection."""
    base = [(c.hi, c.lo, c.gap) for c in dtp.constraints]
    n = len(dtp.var_keys)
    options = [(d.first, d.second) for d in dtp.disjunctions]
    for picks in itertools.product(*options) if options else [()]:
        chosen = base + [(c.hi, c.lo, c.gap) for c in picks]
        if _consistent(n, dtp.lower, dtp.upper, chosen):
            return True
    return False


# ---------------------------------------------------------------------------
# routing


def _stop_times(scenario, stops_per_vehicle, dist):
    """Earliest stop times with waiting; independent fixed-point version.

    Returns (times, ok); ok=False when a window, the horizon, or a
    precedence/visit-order cycle cannot be satisfied.
    """
    task_time: dict[str, float] = {}
    times = {vid: [0.0] * len(stops) for vid, stops in stops_per_vehicle.items()}
    n_tasks = sum(1 for stops in stops_per_vehicle.values() for s in stops if s[0] == "task")
    for _ in range(n_tasks + 2):
        changed = False
        for vid in sorted(stops_per_vehicle):
            stops = stops_per_vehicle[vid]
            speed = scenario.vehicles[vid].nominal_speed
            t = 0.0
            for pos, (kind, ref, node) in enumerate(stops):
                if pos > 0:
                    t += dist[(stops[pos - 1][2], node)] / speed
                if kind == "task":
                    task = scenario.tasks[ref]
                    t = max(t, task.window[0])
                    for pred in task.predecessors:
                        if pred in task_time:
                            t = max(t, task_time[pred])
                if t > times[vid][pos] + 1e-12:
                    times[vid][pos] = t
                    changed = True
                t = times[vid][pos]
                if kind == "task":
                    task_time[ref] = t
        if not changed:
            break
    else:
        return times, False
    for vid, stops in stops_per_vehicle.items():
        for pos, (kind, ref, node) in enumerate(stops):
            if kind == "task" and times[vid][pos] > scenario.tasks[ref].window[1] + 1e-9:
                return times, False
        if times[vid] and times[vid][-1] > scenario.horizon + 1e-9:
            return times, False
    return times, True


def _battery_ok(scenario, vid, stops, dist) -> bool:
    vehicle = scenario.vehicles[vid]
    leg = 0.0
    for (k0, r0, n0), (k1, r1, n1) in zip(stops, stops[1:]):
        leg += dist[(n0, n1)]
        if k1 == "depot":
            if leg > vehicle.range + 1e-9:
                return False
            leg = 0.0
    return True


def enumerate_route_plans(scenario, dist):
    """Exhaustive assignment/order/recharge enumeration.

    ``dist`` maps ordered endpoint pairs to shortest distances.  Returns
    (feasible, best_distance); best_distance is None when infeasible.
    """
    vehicles = sorted(scenario.vehicles)
    tasks = sorted(scenario.tasks)
    best = None

    def vehicle_sequences(vid, assigned):
        """All stop sequences for one vehicle over its assigned tasks."""
        depot = scenario.vehicles[vid].depot
        for order in itertools.permutations(assigned):
            gaps = len(order) - 1
            for recharge_mask in itertools.product([False, True], repeat=max(0, gaps)):
                stops = [("depot", depot, depot)]
                for i, tid in enumerate(order):
                    stops.append(("task", tid, scenario.tasks[tid].node))
                    if i < gaps and recharge_mask[i]:
                        stops.append(("depot", depot, depot))
                stops.append(("depot", depot, depot))
                yield stops

    for assignment in itertools.product(range(len(vehicles)), repeat=len(tasks)):
        per_vehicle: dict[str, list[str]] = {vid: [] for vid in vehicles}
        ok = True
        for tid, v_idx in zip(tasks, assignment):
            vid = vehicles[v_idx]
            if not scenario.vehicles[vid].can_serve(scenario.tasks[tid]):
                ok = False
                break
            per_vehicle[vid].append(tid)
        if not ok:
            continue
        for combo in itertools.product(*(vehicle_sequences(vid, per_vehicle[vid]) for vid in vehicles)):
            stops_per_vehicle = dict(zip(vehicles, combo))
            total = sum(
                dist[(a[2], b[2])]
                for stops in combo
                for a, b in zip(stops, stops[1:])
            )
            if best is not None and total >= best - 1e-9:
                continue
            if not all(_battery_ok(scenario, vid, stops_per_vehicle[vid], dist) for vid in vehicles):
                continue
            _, feasible = _stop_times(scenario, stops_per_vehicle, dist)
            if feasible:
                best = total
    return best is not None, best


# ---------------------------------------------------------------------------
# geometry / dynamics


def square_signed_distance(point, center, half) -> float:
    """Exact signed distance to an axis-aligned square (negative inside)."""
    qx = abs(point[0] - center[0]) - half
    qy = abs(point[1] - center[1]) - half
    outside = math.hypot(max(qx, 0.0), max(qy, 0.0))
    inside = min(max(qx, qy), 0.0)
    return outside + inside


def unicycle_arc_endpoint(x0, y0, th0, v, omega, duration):
    """Closed-form constant-twist endpoint for the continuous unicycle."""
    if abs(omega) < 1e-12:
        return (x0 + v * math.cos(th0) * duration, y0 + v * math.sin(th0) * duration)
    radius = v / omega
    th1 = th0 + omega * duration
    return (
        x0 + radius * (math.sin(th1) - math.sin(th0)),
        y0 - radius * (math.cos(th1) - math.cos(th0)),
    )
