from __future__ import annotations

import random

import pytest

from fleetsched.environment import Scenario, scenario_from_dict, shipped_scenario_path, load_scenario


def grid_scenario_dict(
    rows=3,
    cols=3,
    spacing=10.0,
    vehicles=None,
    tasks=None,
    horizon=600.0,
    mu=20.0,
    capacities=None,
    lengths=None,
    obstacles=None,
):
    """Small grid scenario document for tests.

    Node ids are G<r><c>; edges connect 4-neighbors both ways.  ``lengths``
    and ``capacities`` may override single undirected segments keyed by a
    frozenset of the two node ids.
    """
    lengths = lengths or {}
    capacities = capacities or {}
    vehicle_list = vehicles or [
        {"id": "V1", "depot": "G00", "nominal_speed": 1.0, "max_speed": 2.0, "range": 1000.0}
    ]
    depots = {v["depot"] for v in vehicle_list}
    task_list = tasks or []
    task_nodes = {t["node"] for t in task_list}

    nodes = []
    for r in range(rows):
        for c in range(cols):
            nid = f"G{r}{c}"
            kind = "depot" if nid in depots else ("task-location" if nid in task_nodes else "intersection")
            nodes.append({"id": nid, "x": c * spacing, "y": r * spacing, "kind": kind})
    edges = []
    for r in range(rows):
        for c in range(cols):
            nid = f"G{r}{c}"
            for nbr in ([f"G{r}{c + 1}"] if c + 1 < cols else []) + ([f"G{r + 1}{c}"] if r + 1 < rows else []):
                key = frozenset((nid, nbr))
                length = lengths.get(key, spacing)
                cap = capacities.get(key, "narrow")
                edges.append({"from": nid, "to": nbr, "length": length, "capacity": cap})
                edges.append({"from": nbr, "to": nid, "length": length, "capacity": cap})
    return {
        "nodes": nodes,
        "edges": edges,
        "tasks": task_list,
        "vehicles": vehicle_list,
        "obstacles": obstacles or [],
        "params": {"horizon": horizon, "mu": mu, "dt": 0.1},
    }


def make_grid_scenario(**kwargs) -> Scenario:
    return scenario_from_dict(grid_scenario_dict(**kwargs))


def random_grid_scenario(rng: random.Random, n_vehicles=2, n_tasks=4, rows=3, cols=3) -> Scenario:
    """Randomized feasible-ish scenario on an irregular grid."""
    spacing = 10.0
    node_ids = [f"G{r}{c}" for r in range(rows) for c in range(cols)]
    lengths = {}
    for r in range(rows):
        for c in range(cols):
            nid = f"G{r}{c}"
            if c + 1 < cols:
                lengths[frozenset((nid, f"G{r}{c + 1}"))] = spacing * rng.uniform(1.0, 1.6)
            if r + 1 < rows:
                lengths[frozenset((nid, f"G{r + 1}{c}"))] = spacing * rng.uniform(1.0, 1.6)
    capacities = {key: ("wide" if rng.random() < 0.25 else "narrow") for key in lengths}
    depots = rng.sample(node_ids, n_vehicles)
    vehicles = [
        {
            "id": f"V{i + 1}",
            "depot": depots[i],
            "nominal_speed": 1.0,
            "max_speed": 2.0,
            "range": rng.choice([90.0, 150.0, 1000.0]),
        }
        for i in range(n_vehicles)
    ]
    free_nodes = [n for n in node_ids if n not in depots]
    task_nodes = rng.sample(free_nodes, min(n_tasks, len(free_nodes)))
    tasks = []
    for i, node in enumerate(task_nodes):
        task = {"id": f"T{i + 1}", "node": node}
        if rng.random() < 0.4:
            lo = rng.uniform(0, 80)
            task["window"] = [lo, lo + rng.uniform(120, 400)]
        if i > 0 and rng.random() < 0.35:
            task["predecessors"] = [f"T{rng.randrange(1, i + 1)}"]
        tasks.append(task)
    return scenario_from_dict(
        grid_scenario_dict(
            rows=rows,
            cols=cols,
            vehicles=vehicles,
            tasks=tasks,
            lengths=lengths,
            capacities=capacities,
            horizon=600.0,
        )
    )


@pytest.fixture(scope="session")
def small_scenario() -> Scenario:
    return load_scenario(shipped_scenario_path("small_grid"))


@pytest.fixture(scope="session")
def large_scenario() -> Scenario:
    return load_scenario(shipped_scenario_path("large_factory"))
