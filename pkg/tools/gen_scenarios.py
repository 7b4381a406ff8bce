"""Generate the two shipped scenario files.

The maps are geometric reconstructions: the source experiments fix the
graph sizes (16 nodes; 106 nodes / 292 edges), the road capacities, the
robot counts and the task structure, but not physical dimensions.  Grid
spacing, corridor width and controller parameters here are plausible
choices, not measurements.

Run from the repo root:  python tools/gen_scenarios.py
"""

from __future__ import annotations

import json
import math
from pathlib import Path

OUT_DIR = Path(__file__).resolve().parent.parent / "src" / "fleetsched" / "scenarios"

MPC_PARAMS = {
    "n_horizon": 20,
    "dt": 0.1,
    "q_state": [12.0, 12.0, 2.0],
    "q_action": [1.0, 0.5],
    "q_rate": [2.0, 1.0],
    "q_fleet": 300.0,
    "d_fleet": 1.0,
    "u_min": [0.0, -2.0],
    "u_max": [2.0, 2.0],
    "du_min": [-2.0, -6.0],
    "du_max": [2.0, 6.0],
    "obstacle_weight": 5000.0,
    "obstacle_inflation": 0.35,
    "solver_tol": 1e-4,
    "max_iterations": 60,
}

PLANNER_PARAMS = {"speed_floor_frac": 0.05, "parking_ramp": 2.0, "edge_hold_back": 1.2, "hold_aside": 0.9, "node_pass_radius": 0.6}


def _edge_pair(a: str, b: str, length: float, capacity: str) -> list[dict]:
    return [
        {"from": a, "to": b, "length": length, "capacity": capacity},
        {"from": b, "to": a, "length": length, "capacity": capacity},
    ]


def _rect(x0: float, y0: float, x1: float, y1: float) -> list[list[float]]:
    return [[x0, y0], [x1, y0], [x1, y1], [x0, y1]]


# ---------------------------------------------------------------------------
# small grid: 4x4 nodes, four robots at the corners


def build_small() -> dict:
    spacing = 10.0
    nodes = []
    node_xy = {}
    depots = {"N01", "N04", "N31", "N34"}
    tasks_spec = {
        # robot: ordered visit chain (order enforced through precedence)
        "A1": ["N13", "N33", "N11"],
        "A2": ["N22", "N12", "N32"],
        "A3": ["N14", "N03", "N02"],
        "A4": ["N23", "N21", "N24"],
    }
    task_nodes = {n for chain in tasks_spec.values() for n in chain}

    for row in range(4):
        for col in range(1, 5):
            nid = f"N{row}{col}"
            x = (col - 1) * spacing
            y = 30.0 - row * spacing
            node_xy[nid] = (x, y)
            kind = "depot" if nid in depots else ("task-location" if nid in task_nodes else "intersection")
            nodes.append({"id": nid, "x": x, "y": y, "kind": kind})

    edges = []
    for row in range(4):
        for col in range(1, 5):
            nid = f"N{row}{col}"
            if col < 4:
                edges += _edge_pair(nid, f"N{row}{col + 1}", spacing, "narrow")
            if row < 3:
                edges += _edge_pair(nid, f"N{row + 1}{col}", spacing, "narrow")

    tasks = []
    for robot, chain in sorted(tasks_spec.items()):
        for i, node in enumerate(chain):
            tasks.append(
                {
                    "id": f"T_{robot}_{i + 1}",
                    "node": node,
                    "predecessors": [f"T_{robot}_{i}"] if i else [],
                    "capability": robot,
                }
            )

    vehicles = [
        {"id": "A1", "depot": "N01", "nominal_speed": 1.0, "max_speed": 2.0, "range": 1000.0,
         "capabilities": ["A1"], "footprint_radius": 0.3},
        {"id": "A2", "depot": "N31", "nominal_speed": 1.0, "max_speed": 2.0, "range": 1000.0,
         "capabilities": ["A2"], "footprint_radius": 0.3},
        {"id": "A3", "depot": "N34", "nominal_speed": 1.0, "max_speed": 2.0, "range": 1000.0,
         "capabilities": ["A3"], "footprint_radius": 0.3},
        {"id": "A4", "depot": "N04", "nominal_speed": 1.0, "max_speed": 2.0, "range": 1000.0,
         "capabilities": ["A4"], "footprint_radius": 0.3},
    ]

    # city blocks between the road corridors (3 m drivable width)
    obstacles = []
    for bx in (0.0, 10.0, 20.0):
        for by in (0.0, 10.0, 20.0):
            obstacles.append(_rect(bx + 1.8, by + 1.8, bx + 8.2, by + 8.2))

    return {
        "nodes": nodes,
        "edges": edges,
        "tasks": tasks,
        "vehicles": vehicles,
        "obstacles": obstacles,
        "params": {"horizon": 600.0, "mu": 20.0, "dt": 0.1, "mpc": MPC_PARAMS, "planner": PLANNER_PARAMS},
    }


# ---------------------------------------------------------------------------
# large factory: assembly line in the middle, kitting areas on both sides,
# two depot areas at the top; the two main roads are wide, all else narrow


V_COLS = [6.0, 20.0, 34.0, 48.0, 62.0, 76.0, 90.0]
Y_TOP, Y_KITN, Y_MIDN, Y_UPPER, Y_WORK, Y_LOWER, Y_MIDS, Y_KITS = 54.0, 42.0, 36.0, 30.0, 24.0, 18.0, 12.0, 6.0
WORK_COLS = [27.0, 41.0, 55.0, 69.0]
KIT_COLS = [13.0, 41.0, 55.0, 83.0]
DEPOT_FEET_A = [10.0, 16.0, 24.0, 30.0, 38.0]
DEPOT_FEET_B = [52.0, 58.0, 66.0, 72.0, 80.0]
SPUR_EAST_ROWS = [Y_TOP, Y_KITN, Y_UPPER, Y_LOWER, Y_KITS]  # stubs at x=96
SPUR_SOUTH_COLS = [6.0, 34.0, 62.0, 90.0]  # stubs down to y=0


def build_large() -> dict:
    nodes: dict[str, dict] = {}
    edges: list[dict] = []

    def add_node(x: float, y: float, kind: str = "intersection", name: str | None = None) -> str:
        nid = name or f"X{int(round(x)):03d}Y{int(round(y)):03d}"
        if nid not in nodes:
            nodes[nid] = {"id": nid, "x": x, "y": y, "kind": kind}
        elif kind != "intersection":
            nodes[nid]["kind"] = kind
        return nid

    def connect(a: str, b: str, capacity: str) -> None:
        ax, ay = nodes[a]["x"], nodes[a]["y"]
        bx, by = nodes[b]["x"], nodes[b]["y"]
        edges.extend(_edge_pair(a, b, math.dist((ax, ay), (bx, by)), capacity))

    def add_row(y: float, xs: list[float], capacity: str) -> list[str]:
        ids = [add_node(x, y) for x in sorted(xs)]
        for a, b in zip(ids, ids[1:]):
            connect(a, b, capacity)
        return ids

    # horizontal roads
    add_row(Y_TOP, V_COLS + DEPOT_FEET_A + DEPOT_FEET_B, "narrow")
    add_row(Y_KITN, V_COLS + KIT_COLS, "narrow")
    add_row(Y_MIDN, V_COLS, "narrow")
    add_row(Y_UPPER, V_COLS + WORK_COLS, "wide")
    add_row(Y_LOWER, V_COLS + WORK_COLS, "wide")
    add_row(Y_MIDS, V_COLS, "narrow")
    add_row(Y_KITS, V_COLS + KIT_COLS, "narrow")

    # vertical corridors (crossing every full-width row)
    corridor_rows = [Y_KITS, Y_MIDS, Y_LOWER, Y_UPPER, Y_MIDN, Y_KITN, Y_TOP]
    for x in V_COLS:
        ids = [add_node(x, y) for y in corridor_rows]
        for a, b in zip(ids, ids[1:]):
            connect(a, b, "narrow")

    # workstations between the two wide mains
    workstations = []
    for i, x in enumerate(WORK_COLS):
        wid = add_node(x, Y_WORK, kind="task-location", name=f"W{i + 1}")
        workstations.append(wid)
        connect(add_node(x, Y_LOWER), wid, "narrow")
        connect(wid, add_node(x, Y_UPPER), "narrow")

    # kitting areas: stub off the kitting rows (north points up, south down)
    kits = []
    for i, x in enumerate(KIT_COLS):
        kid = add_node(x, Y_KITN + 6.0, kind="task-location", name=f"KN{i + 1}")
        connect(add_node(x, Y_KITN), kid, "narrow")
        kits.append(kid)
    for i, x in enumerate(KIT_COLS):
        kid = add_node(x, 0.0, kind="task-location", name=f"KS{i + 1}")
        connect(add_node(x, Y_KITS), kid, "narrow")
        kits.append(kid)

    # depots above the top road, five per area
    depot_ids = []
    for i, x in enumerate(DEPOT_FEET_A + DEPOT_FEET_B):
        did = add_node(x, 60.0, kind="depot", name=f"D{i + 1:02d}")
        connect(add_node(x, Y_TOP), did, "narrow")
        depot_ids.append(did)
    # service link inside depot area A
    connect("D02", "D03", "narrow")

    # staging spurs: east dead-ends and south dock stubs
    for y in SPUR_EAST_ROWS:
        sid = add_node(96.0, y)
        connect(add_node(90.0, y), sid, "narrow")
    for x in SPUR_SOUTH_COLS:
        sid = add_node(x, 0.0)
        connect(add_node(x, Y_KITS), sid, "narrow")

    # robot -> (pickup node, delivery node); depot area A serves the west
    # half of the plant, area B the east half, which keeps the top road
    # from becoming one long two-way funnel
    plan = {
        "R01": ("KN1", "W1"),
        "R02": ("KN2", "W2"),
        "R03": ("KS1", "W1"),
        "R04": ("KS2", "W2"),
        "R05": ("KN1", "W2"),
        "R06": ("KN3", "W3"),
        "R07": ("KN4", "W4"),
        "R08": ("KS3", "W3"),
        "R09": ("KS4", "W4"),
        "R10": ("KN3", "W3"),
    }
    tasks = []
    vehicles = []
    for i, (robot, (pick, drop)) in enumerate(sorted(plan.items())):
        tasks.append({"id": f"P_{robot}", "node": pick, "capability": robot})
        tasks.append({"id": f"D_{robot}", "node": drop, "predecessors": [f"P_{robot}"], "capability": robot})
        vehicles.append(
            {
                "id": robot,
                "depot": depot_ids[i],
                "nominal_speed": 1.0,
                "max_speed": 2.0,
                "range": 1000.0,
                "capabilities": [robot],
                "footprint_radius": 0.3,
            }
        )

    obstacles = _large_obstacles()

    doc = {
        "nodes": sorted(nodes.values(), key=lambda n: n["id"]),
        "edges": edges,
        "tasks": tasks,
        "vehicles": vehicles,
        "obstacles": obstacles,
        "params": {"horizon": 900.0, "mu": 20.0, "dt": 0.1, "mpc": MPC_PARAMS, "planner": PLANNER_PARAMS},
    }
    return doc


def _band_blocks(y0: float, y1: float, gap_xs: list[float], x_lo: float, x_hi: float, inset: float = 1.5) -> list:
    """Rectangles filling [y0, y1] between corridor gaps at ``gap_xs``."""
    blocks = []
    xs = sorted(gap_xs)
    spans = []
    if xs:
        spans.append((x_lo, xs[0]))
        spans.extend(zip(xs, xs[1:]))
        spans.append((xs[-1], x_hi))
    else:
        spans.append((x_lo, x_hi))
    for a, b in spans:
        left = a + inset if a != x_lo else x_lo
        right = b - inset if b != x_hi else x_hi
        if right - left >= 1.0:
            blocks.append(_rect(left, y0, right, y1))
    return blocks


def _large_obstacles() -> list:
    blocks = []
    inset = 1.8
    x_lo, x_hi = 3.0, 93.0

    def band(y_low_road: float, y_high_road: float, cols: list[float]):
        return _band_blocks(y_low_road + inset, y_high_road - inset, cols, x_lo, x_hi)

    blocks += band(Y_KITN, Y_TOP, V_COLS + KIT_COLS)  # kitting stubs go up here
    blocks += band(Y_MIDN, Y_KITN, V_COLS)
    blocks += band(Y_UPPER, Y_MIDN, V_COLS)
    blocks += band(Y_LOWER, Y_UPPER, V_COLS + WORK_COLS)  # assembly line band
    blocks += band(Y_MIDS, Y_LOWER, V_COLS)
    blocks += band(Y_KITS, Y_MIDS, V_COLS)
    blocks += band(0.0 - inset, Y_KITS, sorted(set(KIT_COLS + SPUR_SOUTH_COLS)))  # dock band
    blocks += band(Y_TOP, 60.0, DEPOT_FEET_A + DEPOT_FEET_B)  # depot apron
    return blocks


def main() -> None:
    OUT_DIR.mkdir(parents=True, exist_ok=True)

    small = build_small()
    assert len(small["nodes"]) == 16, len(small["nodes"])
    assert len(small["edges"]) == 48, len(small["edges"])
    (OUT_DIR / "small_grid.json").write_text(json.dumps(small, indent=1))
    print(f"small_grid: {len(small['nodes'])} nodes, {len(small['edges'])} edges, "
          f"{len(small['tasks'])} tasks, {len(small['vehicles'])} vehicles")

    large = build_large()
    n_nodes, n_edges = len(large["nodes"]), len(large["edges"])
    print(f"large_factory: {n_nodes} nodes, {n_edges} edges, "
          f"{len(large['tasks'])} tasks, {len(large['vehicles'])} vehicles, "
          f"{len(large['obstacles'])} obstacles")
    assert n_nodes == 106, n_nodes
    assert n_edges == 292, n_edges
    (OUT_DIR / "large_factory.json").write_text(json.dumps(large, indent=1))

    # both files must load cleanly
    from fleetsched.environment import load_scenario

    for name in ("small_grid", "large_factory"):
        scenario = load_scenario(OUT_DIR / f"{name}.json")
        print(f"validated {name}: |N|={len(scenario.graph.nodes)}, |E|={len(scenario.graph.edges)}")


if __name__ == "__main__":
    main()
