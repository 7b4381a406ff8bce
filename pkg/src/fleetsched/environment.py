"""Plant model: road graph, tasks, vehicles, obstacles and scenario files.

A scenario file is a single JSON document with the sections ``nodes``,
``edges``, ``tasks``, ``vehicles``, ``obstacles`` and ``params``.  Loading
validates every structural invariant (inverse edges, strong connectivity,
acyclic precedence, ...) and produces an immutable :class:`Scenario` that
the rest of the pipeline treats as read-only.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from fleetsched.local_planner import PlannerParams
from fleetsched.mpc import MpcParams

NODE_KINDS = ("depot", "task-location", "intersection")
EDGE_CAPACITIES = ("narrow", "wide")


class ScenarioError(Exception):
    """Base class for scenario ingestion failures."""


class ScenarioParseError(ScenarioError):
    """The file is not readable as the documented scenario format."""


class ScenarioValidationError(ScenarioError):
    """A structural invariant is violated; the message names the first one."""


@dataclass(frozen=True)
class Node:
    id: str
    x: float
    y: float
    kind: str  # depot | task-location | intersection

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class Edge:
    """Directed road segment (or one lane of a wide segment)."""

    tail: str
    head: str
    length: float
    capacity: str  # narrow | wide

    @property
    def key(self) -> tuple[str, str]:
        return (self.tail, self.head)


@dataclass(frozen=True)
class Task:
    id: str
    node: str
    window: tuple[float, float]
    predecessors: tuple[str, ...] = ()
    required_capability: str | None = None


@dataclass(frozen=True)
class Vehicle:
    id: str
    depot: str
    nominal_speed: float
    max_speed: float
    range: float
    capabilities: frozenset[str] = frozenset()
    footprint_radius: float = 0.3

    def can_serve(self, task: Task) -> bool:
        return task.required_capability is None or task.required_capability in self.capabilities


@dataclass(frozen=True)
class Polygon:
    """Simple polygon, vertices counter-clockwise."""

    vertices: tuple[tuple[float, float], ...]


@dataclass
class Graph:
    nodes: dict[str, Node]
    edges: dict[tuple[str, str], Edge]
    # node id -> sorted neighbor ids (deterministic iteration order)
    adjacency: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.adjacency:
            adj: dict[str, list[str]] = {node_id: [] for node_id in self.nodes}
            for tail, head in self.edges:
                adj[tail].append(head)
            self.adjacency = {node_id: sorted(nbrs) for node_id, nbrs in adj.items()}

    def edge(self, tail: str, head: str) -> Edge:
        try:
            return self.edges[(tail, head)]
        except KeyError:
            raise KeyError(f"no edge ({tail}, {head}) in graph") from None

    def position(self, node_id: str) -> tuple[float, float]:
        node = self.nodes[node_id]
        return (node.x, node.y)


@dataclass
class Scenario:
    graph: Graph
    tasks: dict[str, Task]
    vehicles: dict[str, Vehicle]
    obstacles: list[Polygon]
    horizon: float
    safety_margin: float  # mu (= phi): minimum temporal separation in seconds
    sim_dt: float
    mpc_params: MpcParams
    planner_params: PlannerParams

    def sorted_vehicles(self) -> list[Vehicle]:
        return [self.vehicles[v] for v in sorted(self.vehicles)]

    def sorted_tasks(self) -> list[Task]:
        return [self.tasks[t] for t in sorted(self.tasks)]


def inverse_edge(graph: Graph, edge: Edge | tuple[str, str]) -> Edge:
    """Return the inverse (head, tail) of an edge that exists in the graph."""
    key = edge.key if isinstance(edge, Edge) else tuple(edge)
    if key not in graph.edges:
        raise KeyError(f"edge {key} not in graph")
    return graph.edge(key[1], key[0])


# ---------------------------------------------------------------------------
# parsing helpers


def _require_fields(entry: dict, allowed: dict[str, bool], section: str) -> None:
    """allowed maps field name -> required?  Unknown fields are rejected."""
    for name in entry:
        if name not in allowed:
            raise ScenarioValidationError(f"unknown field '{name}' in section '{section}'")
    for name, required in allowed.items():
        if required and name not in entry:
            raise ScenarioValidationError(f"missing field '{name}' in section '{section}'")


def _finite(value, what: str) -> float:
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ScenarioValidationError(f"{what} is not a number") from None
    if not math.isfinite(out):
        raise ScenarioValidationError(f"{what} is not finite")
    return out


def _segments_intersect(p1, p2, q1, q2) -> bool:
    """Proper intersection test for the polygon simplicity check."""

    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))


def _validate_polygon(raw, index: int) -> Polygon:
    if not isinstance(raw, list) or len(raw) < 3:
        raise ScenarioValidationError(f"obstacle {index}: polygon needs at least 3 vertices")
    verts = []
    for v in raw:
        if not isinstance(v, (list, tuple)) or len(v) != 2:
            raise ScenarioValidationError(f"obstacle {index}: vertex must be [x, y]")
        verts.append((_finite(v[0], f"obstacle {index} x"), _finite(v[1], f"obstacle {index} y")))
    n = len(verts)
    # non-adjacent edge pairs must not cross
    for i in range(n):
        a1, a2 = verts[i], verts[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            b1, b2 = verts[j], verts[(j + 1) % n]
            if _segments_intersect(a1, a2, b1, b2):
                raise ScenarioValidationError(f"obstacle {index}: polygon self-intersects")
    # normalize to counter-clockwise
    area2 = sum(verts[i][0] * verts[(i + 1) % n][1] - verts[(i + 1) % n][0] * verts[i][1] for i in range(n))
    if area2 == 0:
        raise ScenarioValidationError(f"obstacle {index}: polygon is degenerate")
    if area2 < 0:
        verts.reverse()
    return Polygon(vertices=tuple(verts))


def _precedence_cycle(tasks: dict[str, Task]) -> str | None:
    """Return a task id on a precedence cycle, or None."""
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {t: WHITE for t in tasks}

    def visit(tid: str) -> str | None:
        color[tid] = GRAY
        for pred in tasks[tid].predecessors:
            if color[pred] == GRAY:
                return pred
            if color[pred] == WHITE:
                found = visit(pred)
                if found is not None:
                    return found
        color[tid] = BLACK
        return None

    for tid in sorted(tasks):
        if color[tid] == WHITE:
            found = visit(tid)
            if found is not None:
                return found
    return None


def _check_strong_connectivity(graph: Graph) -> None:
    if not graph.nodes:
        raise ScenarioValidationError("graph has no nodes")
    start = next(iter(sorted(graph.nodes)))
    seen = {start}
    stack = [start]
    while stack:
        node = stack.pop()
        for nbr in graph.adjacency[node]:
            if nbr not in seen:
                seen.add(nbr)
                stack.append(nbr)
    if len(seen) != len(graph.nodes):
        missing = sorted(set(graph.nodes) - seen)[0]
        raise ScenarioValidationError(f"graph not strongly connected: node {missing} unreachable")


_NODE_FIELDS = {"id": True, "x": True, "y": True, "kind": True}
_EDGE_FIELDS = {"from": True, "to": True, "length": True, "capacity": True}
_TASK_FIELDS = {"id": True, "node": True, "window": False, "predecessors": False, "capability": False}
_VEHICLE_FIELDS = {
    "id": True,
    "depot": True,
    "nominal_speed": True,
    "max_speed": True,
    "range": True,
    "capabilities": False,
    "footprint_radius": False,
}
_PARAM_FIELDS = {"horizon": True, "mu": True, "dt": True, "mpc": False, "planner": False}
_SECTIONS = ("nodes", "edges", "tasks", "vehicles", "obstacles", "params")


def scenario_from_dict(doc: dict) -> Scenario:
    """Build and validate a Scenario from a parsed scenario document."""
    if not isinstance(doc, dict):
        raise ScenarioValidationError("scenario document must be an object")
    for key in doc:
        if key not in _SECTIONS:
            raise ScenarioValidationError(f"unknown section '{key}'")
    for key in ("nodes", "edges", "vehicles", "params"):
        if key not in doc:
            raise ScenarioValidationError(f"missing section '{key}'")

    params_raw = doc["params"]
    _require_fields(params_raw, _PARAM_FIELDS, "params")
    horizon = _finite(params_raw["horizon"], "params.horizon")
    if horizon <= 0:
        raise ScenarioValidationError("params.horizon must be > 0")
    mu = _finite(params_raw["mu"], "params.mu")
    if mu < 0:
        raise ScenarioValidationError("params.mu must be >= 0")
    dt = _finite(params_raw["dt"], "params.dt")
    if dt <= 0:
        raise ScenarioValidationError("params.dt must be > 0")

    nodes: dict[str, Node] = {}
    for raw in doc["nodes"]:
        _require_fields(raw, _NODE_FIELDS, "nodes")
        nid = str(raw["id"])
        if nid in nodes:
            raise ScenarioValidationError(f"duplicate node id {nid}")
        if raw["kind"] not in NODE_KINDS:
            raise ScenarioValidationError(f"node {nid}: unknown kind '{raw['kind']}'")
        nodes[nid] = Node(
            id=nid,
            x=_finite(raw["x"], f"node {nid} x"),
            y=_finite(raw["y"], f"node {nid} y"),
            kind=raw["kind"],
        )

    edges: dict[tuple[str, str], Edge] = {}
    for raw in doc["edges"]:
        _require_fields(raw, _EDGE_FIELDS, "edges")
        tail, head = str(raw["from"]), str(raw["to"])
        for endpoint in (tail, head):
            if endpoint not in nodes:
                raise ScenarioValidationError(f"edge ({tail}, {head}): unknown node {endpoint}")
        if tail == head:
            raise ScenarioValidationError(f"edge ({tail}, {head}): self-loop")
        if (tail, head) in edges:
            raise ScenarioValidationError(f"duplicate edge ({tail}, {head})")
        length = _finite(raw["length"], f"edge ({tail}, {head}) length")
        if length <= 0:
            raise ScenarioValidationError(f"edge ({tail}, {head}): length must be > 0")
        if raw["capacity"] not in EDGE_CAPACITIES:
            raise ScenarioValidationError(f"edge ({tail}, {head}): unknown capacity '{raw['capacity']}'")
        euclid = math.dist(nodes[tail].position, nodes[head].position)
        if length < euclid - 1e-9:
            raise ScenarioValidationError(
                f"edge ({tail}, {head}): length {length} shorter than Euclidean distance {euclid:.6g}"
            )
        edges[(tail, head)] = Edge(tail=tail, head=head, length=length, capacity=raw["capacity"])

    for (tail, head), edge in sorted(edges.items()):
        inv = edges.get((head, tail))
        if inv is None:
            raise ScenarioValidationError(f"missing inverse edge ({head}, {tail})")
        if abs(inv.length - edge.length) > 1e-9 or inv.capacity != edge.capacity:
            raise ScenarioValidationError(f"inverse edge ({head}, {tail}) differs in length or capacity")

    graph = Graph(nodes=nodes, edges=edges)
    _check_strong_connectivity(graph)

    tasks: dict[str, Task] = {}
    for raw in doc.get("tasks", []):
        _require_fields(raw, _TASK_FIELDS, "tasks")
        tid = str(raw["id"])
        if tid in tasks:
            raise ScenarioValidationError(f"duplicate task id {tid}")
        node = str(raw["node"])
        if node not in nodes:
            raise ScenarioValidationError(f"task {tid}: unknown node {node}")
        if nodes[node].kind == "depot":
            raise ScenarioValidationError(f"task {tid}: node {node} is a depot")
        window_raw = raw.get("window")
        if window_raw is None:
            window = (0.0, horizon)
        else:
            if not isinstance(window_raw, (list, tuple)) or len(window_raw) != 2:
                raise ScenarioValidationError(f"task {tid}: window must be [t_min, t_max]")
            window = (_finite(window_raw[0], f"task {tid} window"), _finite(window_raw[1], f"task {tid} window"))
            if not (0.0 <= window[0] <= window[1] <= horizon):
                raise ScenarioValidationError(f"task {tid}: window {window} outside [0, {horizon}]")
        preds = tuple(str(p) for p in raw.get("predecessors", []))
        capability = raw.get("capability")
        tasks[tid] = Task(
            id=tid,
            node=node,
            window=window,
            predecessors=preds,
            required_capability=None if capability is None else str(capability),
        )
    for task in tasks.values():
        for pred in task.predecessors:
            if pred not in tasks:
                raise ScenarioValidationError(f"task {task.id}: unknown predecessor {pred}")
            if pred == task.id:
                raise ScenarioValidationError(f"task {task.id}: precedes itself")
    cyclic = _precedence_cycle(tasks)
    if cyclic is not None:
        raise ScenarioValidationError(f"cyclic precedence involving task {cyclic}")

    vehicles: dict[str, Vehicle] = {}
    for raw in doc["vehicles"]:
        _require_fields(raw, _VEHICLE_FIELDS, "vehicles")
        vid = str(raw["id"])
        if vid in vehicles:
            raise ScenarioValidationError(f"duplicate vehicle id {vid}")
        depot = str(raw["depot"])
        if depot not in nodes:
            raise ScenarioValidationError(f"vehicle {vid}: unknown depot {depot}")
        if nodes[depot].kind != "depot":
            raise ScenarioValidationError(f"vehicle {vid}: node {depot} is not a depot")
        nominal = _finite(raw["nominal_speed"], f"vehicle {vid} nominal_speed")
        vmax = _finite(raw["max_speed"], f"vehicle {vid} max_speed")
        rng = _finite(raw["range"], f"vehicle {vid} range")
        if nominal <= 0:
            raise ScenarioValidationError(f"vehicle {vid}: nominal_speed must be > 0")
        if vmax < nominal:
            raise ScenarioValidationError(f"vehicle {vid}: max_speed below nominal_speed")
        if rng <= 0:
            raise ScenarioValidationError(f"vehicle {vid}: range must be > 0")
        footprint = _finite(raw.get("footprint_radius", 0.3), f"vehicle {vid} footprint_radius")
        if footprint <= 0:
            raise ScenarioValidationError(f"vehicle {vid}: footprint_radius must be > 0")
        vehicles[vid] = Vehicle(
            id=vid,
            depot=depot,
            nominal_speed=nominal,
            max_speed=vmax,
            range=rng,
            capabilities=frozenset(str(c) for c in raw.get("capabilities", [])),
            footprint_radius=footprint,
        )
    if not vehicles:
        raise ScenarioValidationError("scenario needs at least one vehicle")

    for task in tasks.values():
        if task.required_capability is not None:
            pass  # capability feasibility is the router's concern, not a file invariant

    obstacles = [_validate_polygon(raw, i) for i, raw in enumerate(doc.get("obstacles", []))]

    mpc_params = MpcParams.from_dict(params_raw.get("mpc", {}), default_dt=dt)
    planner_params = PlannerParams.from_dict(params_raw.get("planner", {}))
    max_footprint = max(v.footprint_radius for v in vehicles.values())
    if mpc_params.d_fleet <= 2.0 * max_footprint:
        raise ScenarioValidationError(
            f"mpc.d_fleet ({mpc_params.d_fleet}) must exceed twice the largest footprint radius"
        )

    return Scenario(
        graph=graph,
        tasks=tasks,
        vehicles=vehicles,
        obstacles=obstacles,
        horizon=horizon,
        safety_margin=mu,
        sim_dt=dt,
        mpc_params=mpc_params,
        planner_params=planner_params,
    )


def load_scenario(path: str | Path) -> Scenario:
    """Load and validate a scenario file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioParseError(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"{path}: not valid JSON ({exc})") from exc
    return scenario_from_dict(doc)


def scenario_to_dict(scenario: Scenario) -> dict:
    """Serialize back to the file format (round-trips through load)."""
    return {
        "nodes": [
            {"id": n.id, "x": n.x, "y": n.y, "kind": n.kind}
            for n in (scenario.graph.nodes[k] for k in sorted(scenario.graph.nodes))
        ],
        "edges": [
            {"from": e.tail, "to": e.head, "length": e.length, "capacity": e.capacity}
            for e in (scenario.graph.edges[k] for k in sorted(scenario.graph.edges))
        ],
        "tasks": [
            {
                "id": t.id,
                "node": t.node,
                "window": list(t.window),
                "predecessors": list(t.predecessors),
                **({"capability": t.required_capability} if t.required_capability else {}),
            }
            for t in scenario.sorted_tasks()
        ],
        "vehicles": [
            {
                "id": v.id,
                "depot": v.depot,
                "nominal_speed": v.nominal_speed,
                "max_speed": v.max_speed,
                "range": v.range,
                "capabilities": sorted(v.capabilities),
                "footprint_radius": v.footprint_radius,
            }
            for v in scenario.sorted_vehicles()
        ],
        "obstacles": [[list(v) for v in poly.vertices] for poly in scenario.obstacles],
        "params": {
            "horizon": scenario.horizon,
            "mu": scenario.safety_margin,
            "dt": scenario.sim_dt,
            "mpc": scenario.mpc_params.to_dict(),
            "planner": scenario.planner_params.to_dict(),
        },
    }


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(scenario), indent=1))


def shipped_scenario_path(name: str) -> Path:
    """Path of a scenario shipped with the package (e.g. 'small_grid')."""
    candidate = resources.files("fleetsched") / "scenarios" / f"{name}.json"
    with resources.as_file(candidate) as concrete:
        return Path(concrete)
