import random

import pytest

from conftest import make_grid_scenario, random_grid_scenario
from fleetsched.environment import Graph, Node, Edge
from fleetsched.routing import (
    Path,
    RoutingInfeasible,
    all_pairs_shortest_paths,
    edge_sequence,
    k_shortest_paths,
    nominal_times,
    plan_routes,
    route_set_full_sequences,
)
from oracles import enumerate_route_plans, floyd_warshall


def test_triangle_shortest_path():
    nodes = {n: Node(id=n, x=0.0, y=0.0, kind="intersection") for n in "ABC"}
    edges = {}
    for a, b, length in (("A", "B", 1.0), ("B", "C", 1.0), ("A", "C", 3.0)):
        edges[(a, b)] = Edge(tail=a, head=b, length=length, capacity="narrow")
        edges[(b, a)] = Edge(tail=b, head=a, length=length, capacity="narrow")
    graph = Graph(nodes=nodes, edges=edges)
    table = all_pairs_shortest_paths(graph, ["A", "B", "C"])
    assert table.path("A", "C").nodes == ("A", "B", "C")
    assert table.distance("A", "C") == pytest.approx(2.0)
    assert table.path("A", "A").nodes == ("A",)
    assert table.distance("A", "A") == 0.0


def test_apsp_matches_floyd_warshall_on_random_graphs():
    rng = random.Random(7)
    for _ in range(50):
        rows = rng.randint(2, 4)
        cols = rng.randint(2, 5)
        scenario = random_grid_scenario(rng, n_vehicles=1, n_tasks=1, rows=rows, cols=cols)
        graph = scenario.graph
        endpoints = sorted(graph.nodes)
        table = all_pairs_shortest_paths(graph, endpoints)
        oracle = floyd_warshall(graph)
        for a in endpoints:
            for b in endpoints:
                assert table.distance(a, b) == pytest.approx(oracle[(a, b)], abs=1e-9)
                # stored length equals the path's own edge lengths
                path = table.path(a, b)
                total = sum(graph.edge(u, v).length for u, v in edge_sequence(path))
                assert total == pytest.approx(path.length, abs=1e-9)


def test_small_grid_a4_route(small_scenario):
    endpoints = {v.depot for v in small_scenario.vehicles.values()} | {
        t.node for t in small_scenario.tasks.values()
    }
    table = all_pairs_shortest_paths(small_scenario.graph, endpoints)
    route_set = plan_routes(small_scenario, table)
    a4 = route_set.routes["A4"]
    assert [s.node for s in a4.stops] == ["N04", "N23", "N21", "N24", "N04"]
    task_union = sorted(t for r in route_set.routes.values() for t in r.task_ids())
    assert task_union == sorted(small_scenario.tasks)
    # hand-computed grid distances at nominal speed 1 m/s: the legs are
    # 30, 20, 30 and 20 m on the 10 m grid
    times = nominal_times(a4, route_set.legs["A4"], 1.0)
    assert times == pytest.approx([0.0, 30.0, 50.0, 80.0, 100.0])


def test_single_vehicle_single_task():
    scenario = make_grid_scenario(
        vehicles=[{"id": "V1", "depot": "G00", "nominal_speed": 1.0, "max_speed": 2.0, "range": 100.0}],
        tasks=[{"id": "T1", "node": "G01"}],
    )
    table = all_pairs_shortest_paths(scenario.graph, {"G00", "G01"})
    route_set = plan_routes(scenario, table)
    assert [s.ref for s in route_set.routes["V1"].stops] == ["G00", "T1", "G00"]
    assert route_set.total_distance == pytest.approx(20.0)


def test_contradictory_precedence_and_windows_infeasible():
    # T2 must precede T1, but T2's window opens after T1's closes
    scenario = make_grid_scenario(
        tasks=[
            {"id": "T1", "node": "G01", "window": [0, 50], "predecessors": ["T2"]},
            {"id": "T2", "node": "G02", "window": [100, 200]},
        ],
    )
    table = all_pairs_shortest_paths(scenario.graph, {"G00", "G01", "G02"})
    with pytest.raises(RoutingInfeasible) as exc:
        plan_routes(scenario, table)
    assert exc.value.category == "time-window unreachable"
    assert exc.value.task == "T1"


def test_no_capable_vehicle_certificate():
    scenario = make_grid_scenario(
        vehicles=[
            {"id": "V1", "depot": "G00", "nominal_speed": 1.0, "max_speed": 2.0, "range": 100.0,
             "capabilities": ["lift"]}
        ],
        tasks=[{"id": "T1", "node": "G01", "capability": "crane"}],
    )
    table = all_pairs_shortest_paths(scenario.graph, {"G00", "G01"})
    with pytest.raises(RoutingInfeasible) as exc:
        plan_routes(scenario, table)
    assert exc.value.category == "no capable vehicle"


def test_range_certificate():
    scenario = make_grid_scenario(
        vehicles=[{"id": "V1", "depot": "G00", "nominal_speed": 1.0, "max_speed": 2.0, "range": 15.0}],
        tasks=[{"id": "T1", "node": "G22"}],
    )
    table = all_pairs_shortest_paths(scenario.graph, {"G00", "G22"})
    with pytest.raises(RoutingInfeasible) as exc:
        plan_routes(scenario, table)
    assert exc.value.category == "range insufficient"


def test_recharge_inserted_when_needed():
    # two tasks, each reachable on one charge but not both in a row
    scenario = make_grid_scenario(
        vehicles=[{"id": "V1", "depot": "G00", "nominal_speed": 1.0, "max_speed": 2.0, "range": 45.0}],
        tasks=[{"id": "T1", "node": "G02"}, {"id": "T2", "node": "G20"}],
    )
    table = all_pairs_shortest_paths(scenario.graph, {"G00", "G02", "G20"})
    route_set = plan_routes(scenario, table)
    refs = [s.ref for s in route_set.routes["V1"].stops]
    assert refs.count("G00") == 3  # start, recharge, end
    # battery safety invariant: every depot-to-depot leg within range
    legs = route_set.legs["V1"]
    stops = route_set.routes["V1"].stops
    dist = 0.0
    for path, stop in zip(legs, stops[1:]):
        dist += path.length
        if stop.kind == "depot":
            assert dist <= 45.0 + 1e-9
            dist = 0.0


def test_nominal_times_arithmetic():
    scenario = make_grid_scenario(tasks=[{"id": "T1", "node": "G01"}])
    table = all_pairs_shortest_paths(scenario.graph, {"G00", "G01"})
    route_set = plan_routes(scenario, table)
    route = route_set.routes["V1"]
    times = nominal_times(route, route_set.legs["V1"], 1.0)
    assert times == pytest.approx([0.0, 10.0, 20.0])
    # paper-style arithmetic example: legs of 10 m and 20 m at 1 m/s
    fake_route = route
    paths = [Path(nodes=("G00", "G01"), length=10.0), Path(nodes=("G01", "G00"), length=20.0)]
    assert nominal_times(fake_route, paths, 1.0) == pytest.approx([0.0, 10.0, 30.0])


def test_nominal_times_empty_route():
    scenario = make_grid_scenario(
        vehicles=[
            {"id": "V1", "depot": "G00", "nominal_speed": 1.0, "max_speed": 2.0, "range": 100.0,
             "capabilities": ["x"]},
            {"id": "V2", "depot": "G22", "nominal_speed": 1.0, "max_speed": 2.0, "range": 100.0},
        ],
        tasks=[{"id": "T1", "node": "G01", "capability": "x"}],
    )
    table = all_pairs_shortest_paths(scenario.graph, {"G00", "G22", "G01"})
    route_set = plan_routes(scenario, table)
    v2 = route_set.routes["V2"]
    assert [s.ref for s in v2.stops] == ["G22", "G22"]
    assert nominal_times(v2, route_set.legs["V2"], 1.0) == [0.0, 0.0]
    seqs = route_set_full_sequences(route_set)
    assert seqs["V2"] == ["G22", "G22"]


def test_exactly_once_coverage_random():
    rng = random.Random(11)
    for _ in range(10):
        scenario = random_grid_scenario(rng, n_vehicles=2, n_tasks=3)
        endpoints = {v.depot for v in scenario.vehicles.values()} | {
            t.node for t in scenario.tasks.values()
        }
        table = all_pairs_shortest_paths(scenario.graph, endpoints)
        try:
            route_set = plan_routes(scenario, table)
        except RoutingInfeasible:
            continue
        served = sorted(t for r in route_set.routes.values() for t in r.task_ids())
        assert served == sorted(scenario.tasks)


def test_oracle_equivalence_small_instances():
    rng = random.Random(23)
    checked = 0
    for _ in range(12):
        n_vehicles = rng.randint(1, 2)
        n_tasks = rng.randint(1, 3)
        scenario = random_grid_scenario(rng, n_vehicles=n_vehicles, n_tasks=n_tasks)
        endpoints = sorted(scenario.graph.nodes)
        table = all_pairs_shortest_paths(scenario.graph, endpoints)
        dist = {(a, b): table.distance(a, b) for a in endpoints for b in endpoints}
        expected_feasible, expected_best = enumerate_route_plans(scenario, dist)
        try:
            route_set = plan_routes(scenario, table)
            got_feasible, got_best = True, route_set.total_distance
        except RoutingInfeasible:
            got_feasible, got_best = False, None
        assert got_feasible == expected_feasible
        if expected_feasible:
            assert got_best == pytest.approx(expected_best, abs=1e-6)
        checked += 1
    assert checked == 12


def test_excluded_signature_forces_different_routes():
    scenario = make_grid_scenario(
        tasks=[{"id": "T1", "node": "G01"}, {"id": "T2", "node": "G10"}],
    )
    table = all_pairs_shortest_paths(scenario.graph, {"G00", "G01", "G10"})
    first = plan_routes(scenario, table)
    second = plan_routes(scenario, table, excluded_signatures={first.signature()})
    assert second.signature() != first.signature()
    assert second.total_distance >= first.total_distance - 1e-9


def test_k_shortest_paths_loopless_and_ordered():
    scenario = make_grid_scenario()
    graph = scenario.graph
    paths = k_shortest_paths(graph, "G00", "G22", 5)
    assert len(paths) >= 3
    lengths = [p.length for p in paths]
    assert lengths == sorted(lengths)
    for path in paths:
        assert len(set(path.nodes)) == len(path.nodes)
        for a, b in edge_sequence(path):
            assert (a, b) in graph.edges
    assert paths[0].length == pytest.approx(40.0)
    # distinct paths
    assert len({p.nodes for p in paths}) == len(paths)
