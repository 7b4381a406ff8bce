"""Task assignment and route construction over the road graph.

Shortest paths between every pair of task/depot endpoints are computed
first; routes are then found by depth-first branch and bound over
(assignment, ordering, recharge-insertion) decisions.  A candidate route
set is feasible when every task is served exactly once by a capable
vehicle within its time window and after its predecessors (waiting is
allowed), battery range is respected between consecutive visits to the
vehicle's own depot, and all vehicles are home by the horizon.  Among
feasible route sets the planner returns the one with minimal total
traveled distance, tie-broken by the lexicographically smallest stop
sequence.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

from fleetsched.environment import Graph, Scenario

DIST_EPS = 1e-9


class RoutingInfeasible(Exception):
    """Routing is impossible; category and the offending task explain why."""

    def __init__(self, category: str, task: str | None = None):
        self.category = category
        self.task = task
        detail = f"routing infeasible: {category}" + (f" for task {task}" if task else "")
        super().__init__(detail)


@dataclass(frozen=True)
class Path:
    nodes: tuple[str, ...]
    length: float

    def __post_init__(self) -> None:
        if len(set(self.nodes)) != len(self.nodes):
            raise ValueError("path repeats a node")


def edge_sequence(path: Path) -> tuple[tuple[str, str], ...]:
    """Edges (tail, head) traversed by a path; empty for a trivial path."""
    return tuple(zip(path.nodes, path.nodes[1:]))


@dataclass(frozen=True)
class Stop:
    kind: str  # "depot" | "task"
    ref: str  # task id, or depot node id for depot stops
    node: str  # graph node where the stop happens


@dataclass(frozen=True)
class Route:
    vehicle: str
    stops: tuple[Stop, ...]

    def stop_refs(self) -> tuple[str, ...]:
        return tuple(s.ref for s in self.stops)

    def task_ids(self) -> tuple[str, ...]:
        return tuple(s.ref for s in self.stops if s.kind == "task")


@dataclass
class RouteSet:
    routes: dict[str, Route]
    legs: dict[str, list[Path]]  # vehicle -> path for each consecutive stop pair
    total_distance: float

    def signature(self) -> tuple:
        return tuple((v, self.routes[v].stop_refs()) for v in sorted(self.routes))


@dataclass
class PathTable:
    """Shortest path and length for every ordered endpoint pair."""

    paths: dict[tuple[str, str], Path]

    def path(self, a: str, b: str) -> Path:
        return self.paths[(a, b)]

    def distance(self, a: str, b: str) -> float:
        return self.paths[(a, b)].length


# ---------------------------------------------------------------------------
# shortest paths


def dijkstra(graph: Graph, source: str) -> tuple[dict[str, float], dict[str, str]]:
    """Distances and predecessor map from ``source``; ties broken by node id."""
    dist = {source: 0.0}
    prev: dict[str, str] = {}
    heap: list[tuple[float, str]] = [(0.0, source)]
    done: set[str] = set()
    while heap:
        d, node = heapq.heappop(heap)
        if node in done:
            continue
        done.add(node)
        for nbr in graph.adjacency[node]:
            nd = d + graph.edge(node, nbr).length
            best = dist.get(nbr)
            if best is None or nd < best - DIST_EPS or (abs(nd - best) <= DIST_EPS and node < prev.get(nbr, "￿")):
                dist[nbr] = nd
                prev[nbr] = node
                heapq.heappush(heap, (nd, nbr))
    return dist, prev


def _reconstruct(prev: dict[str, str], source: str, target: str) -> tuple[str, ...]:
    nodes = [target]
    while nodes[-1] != source:
        nodes.append(prev[nodes[-1]])
    return tuple(reversed(nodes))


def all_pairs_shortest_paths(graph: Graph, endpoints) -> PathTable:
    """Dijkstra from each endpoint; (a, a) maps to the trivial path."""
    endpoints = sorted(set(endpoints))
    table: dict[tuple[str, str], Path] = {}
    for src in endpoints:
        dist, prev = dijkstra(graph, src)
        for dst in endpoints:
            if dst == src:
                table[(src, dst)] = Path(nodes=(src,), length=0.0)
            else:
                table[(src, dst)] = Path(nodes=_reconstruct(prev, src, dst), length=dist[dst])
    return PathTable(paths=table)


def k_shortest_paths(graph: Graph, source: str, target: str, k: int) -> list[Path]:
    """Yen's loopless k-shortest paths, ordered by (length, node sequence)."""
    if source == target:
        return [Path(nodes=(source,), length=0.0)]
    first = _spur_path(graph, source, target, set(), set())
    if first is None:
        return []
    found = [first]
    candidates: list[tuple[float, tuple[str, ...]]] = []
    seen = {first.nodes}
    while len(found) < k:
        base = found[-1].nodes
        for i in range(len(base) - 1):
            spur = base[i]
            root = base[: i + 1]
            banned_edges = {
                (p.nodes[i], p.nodes[i + 1]) for p in found if len(p.nodes) > i + 1 and p.nodes[: i + 1] == root
            }
            banned_nodes = set(root[:-1])
            root_len = sum(graph.edge(a, b).length for a, b in zip(root, root[1:]))
            sub = _spur_path(graph, spur, target, banned_edges, banned_nodes)
            if sub is None:
                continue
            total = root[:-1] + sub.nodes
            if total in seen or len(set(total)) != len(total):
                continue
            seen.add(total)
            heapq.heappush(candidates, (root_len + sub.length, total))
        if not candidates:
            break
        length, nodes = heapq.heappop(candidates)
        found.append(Path(nodes=nodes, length=length))
    return found


def _spur_path(graph: Graph, source: str, target: str, banned_edges: set, banned_nodes: set) -> Path | None:
    dist = {source: 0.0}
    prev: dict[str, str] = {}
    heap = [(0.0, source)]
    done: set[str] = set()
    while heap:
        d, node = heapq.heappop(heap)
        if node in done:
            continue
        done.add(node)
        if node == target:
            return Path(nodes=_reconstruct(prev, source, target), length=d)
        for nbr in graph.adjacency[node]:
            if nbr in banned_nodes or (node, nbr) in banned_edges:
                continue
            nd = d + graph.edge(node, nbr).length
            best = dist.get(nbr)
            if best is None or nd < best - DIST_EPS or (abs(nd - best) <= DIST_EPS and node < prev.get(nbr, "￿")):
                dist[nbr] = nd
                prev[nbr] = node
                heapq.heappush(heap, (nd, nbr))
    return None


# ---------------------------------------------------------------------------
# nominal timing


def nominal_times(route: Route, paths: list[Path], nominal_speed: float) -> list[float]:
    """Pure-travel arrival time at each stop (no waiting), starting at 0."""
    times = [0.0]
    for path in paths:
        times.append(times[-1] + path.length / nominal_speed)
    if len(times) != len(route.stops):
        raise ValueError("paths do not match route legs")
    return times


def effective_stop_times(scenario: Scenario, stops_by_vehicle: dict[str, list[Stop]], legs_by_vehicle: dict[str, list[Path]]):
    """Earliest stop times under nominal speed with waiting allowed.

    Waiting covers both time-window openings and cross-vehicle precedence.
    Returns (times_by_vehicle, feasible); infeasible when a window or the
    horizon cannot be met, or precedence interacts cyclically with the
    visit order.
    """
    times: dict[str, list[float]] = {}
    task_time: dict[str, float] = {}
    task_vehicle_pos: dict[str, tuple[str, int]] = {}
    for vid, stops in stops_by_vehicle.items():
        times[vid] = [0.0] * len(stops)
        for pos, stop in enumerate(stops):
            if stop.kind == "task":
                task_vehicle_pos[stop.ref] = (vid, pos)

    speed = {vid: scenario.vehicles[vid].nominal_speed for vid in stops_by_vehicle}
    max_rounds = len(task_vehicle_pos) + 2
    for _ in range(max_rounds):
        changed = False
        for vid in sorted(stops_by_vehicle):
            stops = stops_by_vehicle[vid]
            legs = legs_by_vehicle[vid]
            t = 0.0
            for pos, stop in enumerate(stops):
                if pos > 0:
                    t = t + legs[pos - 1].length / speed[vid]
                if stop.kind == "task":
                    task = scenario.tasks[stop.ref]
                    t = max(t, task.window[0])
                    for pred in task.predecessors:
                        if pred in task_time:
                            t = max(t, task_time[pred])
                if t > times[vid][pos] + 1e-12:
                    changed = True
                times[vid][pos] = max(times[vid][pos], t)
                t = times[vid][pos]
                if stop.kind == "task":
                    task_time[stop.ref] = t
        if not changed:
            break
    else:
        return times, False  # still changing: precedence cycles with visit order

    for vid, stops in stops_by_vehicle.items():
        for pos, stop in enumerate(stops):
            if stop.kind == "task":
                task = scenario.tasks[stop.ref]
                if times[vid][pos] > task.window[1] + 1e-9:
                    return times, False
        if times[vid] and times[vid][-1] > scenario.horizon + 1e-9:
            return times, False
    return times, True


# ---------------------------------------------------------------------------
# branch and bound


@dataclass
class _SearchState:
    best_dist: float = math.inf
    best_signature: tuple | None = None
    best_stops: dict[str, list[Stop]] | None = None
    nodes_expanded: int = 0


def plan_routes(
    scenario: Scenario,
    path_table: PathTable,
    excluded_signatures: frozenset | set = frozenset(),
    node_budget: int = 2_000_000,
) -> RouteSet:
    """Assign every task to a capable vehicle and order each vehicle's route.

    Raises :class:`RoutingInfeasible` with a certificate category when no
    feasible route set exists.  ``excluded_signatures`` forces the search
    past previously tried (assignment, ordering) combinations.
    """
    tasks = scenario.sorted_tasks()
    vehicles = scenario.sorted_vehicles()

    for task in tasks:
        capable = [v for v in vehicles if v.can_serve(task)]
        if not capable:
            raise RoutingInfeasible("no capable vehicle", task.id)
        if all(
            path_table.distance(v.depot, task.node) + path_table.distance(task.node, v.depot) > v.range + DIST_EPS
            for v in capable
        ):
            raise RoutingInfeasible("range insufficient", task.id)

    _check_window_reachability(scenario, path_table)

    # admissible-ish bound: every unassigned task still costs at least its
    # cheapest approach from any endpoint
    endpoints = sorted({v.depot for v in vehicles} | {t.node for t in tasks})
    min_in_dist = {}
    for task in tasks:
        dists = [path_table.distance(e, task.node) for e in endpoints if e != task.node]
        min_in_dist[task.id] = min(dists) if dists else 0.0

    capable_indices = {
        task.id: {i for i, v in enumerate(vehicles) if v.can_serve(task)} for task in tasks
    }
    max_capable = {tid: max(idxs) for tid, idxs in capable_indices.items()}

    state = _SearchState()
    stops_by_vehicle: dict[str, list[Stop]] = {}
    unassigned = {t.id for t in tasks}

    def depot_stop(vehicle) -> Stop:
        return Stop(kind="depot", ref=vehicle.depot, node=vehicle.depot)

    def candidate_complete(total_dist: float) -> None:
        signature = tuple((v.id, tuple(s.ref for s in stops_by_vehicle[v.id])) for v in vehicles)
        if signature in excluded_signatures:
            return
        legs = {
            vid: [path_table.path(a.node, b.node) for a, b in zip(stops, stops[1:])]
            for vid, stops in stops_by_vehicle.items()
        }
        _, feasible = effective_stop_times(scenario, stops_by_vehicle, legs)
        if not feasible:
            return
        better = total_dist < state.best_dist - DIST_EPS or (
            abs(total_dist - state.best_dist) <= DIST_EPS
            and (state.best_signature is None or signature < state.best_signature)
        )
        if better:
            state.best_dist = total_dist
            state.best_signature = signature
            state.best_stops = {vid: list(stops) for vid, stops in stops_by_vehicle.items()}

    def extend(v_index: int, total_dist: float, leg_dist: float, elapsed: float) -> None:
        """DFS over the current vehicle's next stop.

        ``leg_dist`` is distance since the last own-depot visit; ``elapsed``
        is the pure-travel clock used for window pruning.
        """
        state.nodes_expanded += 1
        if state.nodes_expanded > node_budget:
            raise RuntimeError("plan_routes search budget exhausted")
        vehicle = vehicles[v_index]
        stops = stops_by_vehicle[vehicle.id]
        here = stops[-1].node
        remaining_lb = sum(min_in_dist[t] for t in unassigned)

        # option 1: serve one of the remaining tasks
        for task in tasks:
            if task.id not in unassigned or not vehicle.can_serve(task):
                continue
            # an unplaced predecessor must still fit on a later vehicle;
            # placing it behind this task on the same vehicle cannot work
            if any(
                pred in unassigned and not any(j > v_index for j in capable_indices[pred])
                for pred in task.predecessors
            ):
                continue
            d_leg = path_table.distance(here, task.node)
            d_home = path_table.distance(task.node, vehicle.depot)
            if leg_dist + d_leg + d_home > vehicle.range + DIST_EPS:
                continue
            arrival = elapsed + d_leg / vehicle.nominal_speed
            if arrival > task.window[1] + 1e-9:
                continue
            bound = total_dist + d_leg + remaining_lb - min_in_dist[task.id]
            if bound > state.best_dist + DIST_EPS:
                continue
            unassigned.remove(task.id)
            stops.append(Stop(kind="task", ref=task.id, node=task.node))
            extend(v_index, total_dist + d_leg, leg_dist + d_leg, max(arrival, task.window[0]))
            stops.pop()
            unassigned.add(task.id)

        # option 2: recharge at the own depot between tasks
        if stops[-1].kind == "task" and any(
            t.id in unassigned and vehicle.can_serve(t) for t in tasks
        ):
            d_leg = path_table.distance(here, vehicle.depot)
            if leg_dist + d_leg <= vehicle.range + DIST_EPS:
                bound = total_dist + d_leg + remaining_lb
                if bound <= state.best_dist + DIST_EPS:
                    stops.append(depot_stop(vehicle))
                    extend(v_index, total_dist + d_leg, 0.0, elapsed + d_leg / vehicle.nominal_speed)
                    stops.pop()

        # option 3: close this route and move to the next vehicle;
        # pointless if that strands a task only this (or an earlier) vehicle can serve
        if any(max_capable[tid] <= v_index for tid in unassigned):
            return
        d_home = path_table.distance(here, vehicle.depot)
        if leg_dist + d_home > vehicle.range + DIST_EPS:
            return
        finish = elapsed + d_home / vehicle.nominal_speed
        if finish > scenario.horizon + 1e-9:
            return
        closed_dist = total_dist + d_home
        if closed_dist + sum(min_in_dist[t] for t in unassigned) > state.best_dist + DIST_EPS:
            return
        stops.append(depot_stop(vehicle))
        if v_index + 1 < len(vehicles):
            nxt = vehicles[v_index + 1]
            stops_by_vehicle[nxt.id] = [depot_stop(nxt)]
            extend(v_index + 1, closed_dist, 0.0, 0.0)
            del stops_by_vehicle[nxt.id]
        elif not unassigned:
            candidate_complete(closed_dist)
        stops.pop()

    first = vehicles[0]
    stops_by_vehicle[first.id] = [depot_stop(first)]
    extend(0, 0.0, 0.0, 0.0)

    if state.best_stops is None:
        raise RoutingInfeasible("no feasible route combination")

    routes = {vid: Route(vehicle=vid, stops=tuple(stops)) for vid, stops in state.best_stops.items()}
    legs = {
        vid: [path_table.path(a.node, b.node) for a, b in zip(r.stops, r.stops[1:])]
        for vid, r in routes.items()
    }
    return RouteSet(routes=routes, legs=legs, total_distance=state.best_dist)


def _check_window_reachability(scenario: Scenario, path_table: PathTable) -> None:
    """Earliest-possible service times through the precedence DAG."""
    tasks = scenario.tasks
    vehicles = scenario.sorted_vehicles()
    earliest: dict[str, float] = {}

    def visit(tid: str, trail: tuple[str, ...]) -> float:
        if tid in earliest:
            return earliest[tid]
        task = tasks[tid]
        travel = min(
            path_table.distance(v.depot, task.node) / v.nominal_speed
            for v in vehicles
            if v.can_serve(task)
        )
        t = max(travel, task.window[0])
        for pred in task.predecessors:
            if pred in trail:
                continue  # cycles are rejected at load time
            t = max(t, visit(pred, trail + (tid,)))
        earliest[tid] = t
        return t

    for tid in sorted(tasks):
        if visit(tid, ()) > tasks[tid].window[1] + 1e-9:
            raise RoutingInfeasible("time-window unreachable", tid)


def route_set_full_sequences(route_set: RouteSet) -> dict[str, list[str]]:
    """Node sequence each vehicle traverses, stop boundaries included.

    Zero-length legs (consecutive stops at the same node) contribute a
    repeated node so every stop keeps its own entry.
    """
    out: dict[str, list[str]] = {}
    for vid in sorted(route_set.routes):
        route = route_set.routes[vid]
        legs = route_set.legs[vid]
        seq = [route.stops[0].node]
        for path in legs:
            if len(path.nodes) == 1:
                seq.append(path.nodes[0])
            else:
                seq.extend(path.nodes[1:])
        out[vid] = seq
    return out


def route_set_stop_indices(route_set: RouteSet) -> dict[str, list[int]]:
    """Index of each stop inside the vehicle's full node sequence."""
    out: dict[str, list[int]] = {}
    for vid in sorted(route_set.routes):
        legs = route_set.legs[vid]
        idx = [0]
        pos = 0
        for path in legs:
            pos += max(1, len(path.nodes) - 1)
            idx.append(pos)
        out[vid] = idx
    return out


def serialize_route_set(route_set: RouteSet) -> dict:
    return {
        "total_distance": route_set.total_distance,
        "routes": [
            {
                "vehicle": vid,
                "stops": [
                    {"kind": s.kind, "ref": s.ref, "node": s.node} for s in route_set.routes[vid].stops
                ],
                "legs": [{"nodes": list(p.nodes), "length": p.length} for p in route_set.legs[vid]],
            }
            for vid in sorted(route_set.routes)
        ],
    }


def deserialize_route_set(doc: dict) -> RouteSet:
    routes: dict[str, Route] = {}
    legs: dict[str, list[Path]] = {}
    for raw in doc["routes"]:
        vid = raw["vehicle"]
        routes[vid] = Route(
            vehicle=vid,
            stops=tuple(Stop(kind=s["kind"], ref=s["ref"], node=s["node"]) for s in raw["stops"]),
        )
        legs[vid] = [Path(nodes=tuple(p["nodes"]), length=float(p["length"])) for p in raw["legs"]]
    return RouteSet(routes=routes, legs=legs, total_distance=float(doc["total_distance"]))
