import random
import time

import pytest

from conftest import make_grid_scenario, random_grid_scenario
from fleetsched.capacity_scheduler import (
    AlternativesExhausted,
    DiffConstraint,
    Disjunction,
    DisjunctiveTemporalProblem,
    PathChanger,
    Schedule,
    ScheduleEntry,
    SchedulingInfeasible,
    build_capacity_problem,
    comsat_schedule,
    extract_schedule,
    schedule_csv_text,
    schedule_document,
    parse_schedule_document,
    solve_dtp,
    verify_schedule,
)
from fleetsched.routing import Path, Route, RouteSet, Stop, all_pairs_shortest_paths, plan_routes
from oracles import brute_force_dtp


def route_set_from_legs(scenario, legs_by_vehicle, task_lookup=None):
    """Build a RouteSet from explicit per-vehicle legs (lists of node ids).

    Intermediate stop nodes are looked up in ``task_lookup`` (node ->
    task id); the first/last stops are the vehicle's depot.
    """
    task_lookup = task_lookup or {
        task.node: tid for tid, task in sorted(getattr(scenario, "tasks", {}).items())
    }
    routes = {}
    legs = {}
    total = 0.0
    for vid, leg_nodes in legs_by_vehicle.items():
        depot = scenario.vehicles[vid].depot
        stops = [Stop(kind="depot", ref=depot, node=depot)]
        paths = []
        for i, nodes in enumerate(leg_nodes):
            length = sum(scenario.graph.edge(a, b).length for a, b in zip(nodes, nodes[1:]))
            paths.append(Path(nodes=tuple(nodes), length=length))
            total += length
            end = nodes[-1]
            if i == len(leg_nodes) - 1:
                stops.append(Stop(kind="depot", ref=depot, node=end))
            else:
                stops.append(Stop(kind="task", ref=task_lookup[end], node=end))
        routes[vid] = Route(vehicle=vid, stops=tuple(stops))
        legs[vid] = paths
    return RouteSet(routes=routes, legs=legs, total_distance=total)


def two_vehicle_scenario(capacity="narrow", tasks=None):
    # 2x3 grid; V1 at G00, V2 at G02; middle column shared
    return make_grid_scenario(
        rows=2,
        cols=3,
        vehicles=[
            {"id": "V1", "depot": "G00", "nominal_speed": 1.0, "max_speed": 2.0, "range": 1000.0},
            {"id": "V2", "depot": "G02", "nominal_speed": 1.0, "max_speed": 2.0, "range": 1000.0},
        ],
        tasks=tasks or [],
        capacities={frozenset(("G01", "G11")): capacity},
    )


def count_families(dtp):
    out = {"node-exclusion": 0, "edge-trailing": 0, "edge-head-on": 0}
    for d in dtp.disjunctions:
        out[d.family] += 1
    return out


def test_crossing_routes_single_node_disjunction():
    scenario = two_vehicle_scenario(
        tasks=[
            {"id": "T1", "node": "G01", "capability": "V1"},
            {"id": "T2", "node": "G01", "capability": "V2"},
        ]
    )
    rs = route_set_from_legs(
        scenario,
        {"V1": [["G00", "G01"], ["G01", "G00"]], "V2": [["G02", "G01"], ["G01", "G02"]]},
        task_lookup=None,
    )
    # both vehicles turn around at the shared node G01; the edges differ
    rs.routes["V1"] = Route(
        vehicle="V1",
        stops=(
            Stop(kind="depot", ref="G00", node="G00"),
            Stop(kind="task", ref="T1", node="G01"),
            Stop(kind="depot", ref="G00", node="G00"),
        ),
    )
    rs.routes["V2"] = Route(
        vehicle="V2",
        stops=(
            Stop(kind="depot", ref="G02", node="G02"),
            Stop(kind="task", ref="T2", node="G01"),
            Stop(kind="depot", ref="G02", node="G02"),
        ),
    )
    dtp = build_capacity_problem(rs, scenario)
    families = count_families(dtp)
    assert families["node-exclusion"] == 1
    assert families["edge-trailing"] == 0
    assert families["edge-head-on"] == 0


def test_head_on_narrow_edge_disjunction():
    def build(capacity):
        scenario = two_vehicle_scenario(
            capacity,
            tasks=[
                {"id": "T1", "node": "G11", "capability": "V1"},
                {"id": "T2", "node": "G11", "capability": "V2"},
            ],
        )
        rs = route_set_from_legs(
            scenario,
            {
                "V1": [["G00", "G01", "G11"], ["G11", "G01", "G00"]],
                "V2": [["G02", "G01", "G11"], ["G11", "G01", "G02"]],
            },
            task_lookup={"G11": "T1"},
        )
        rs.routes["V2"] = Route(
            vehicle="V2",
            stops=(
                Stop(kind="depot", ref="G02", node="G02"),
                Stop(kind="task", ref="T2", node="G11"),
                Stop(kind="depot", ref="G02", node="G02"),
            ),
        )
        return scenario, rs

    scenario, rs = build("narrow")
    families = count_families(build_capacity_problem(rs, scenario))
    # both robots use (G01,G11) and (G11,G01): two same-direction pairings
    # and two head-on pairings
    assert families["edge-trailing"] == 2
    assert families["edge-head-on"] == 2

    wide_scenario, wide_rs = build("wide")
    wide_families = count_families(build_capacity_problem(wide_rs, wide_scenario))
    assert wide_families["edge-head-on"] == 0
    assert wide_families["edge-trailing"] == 0


def test_head_on_exactly_one_disjunction_when_disjoint_otherwise():
    # V1 traverses (G01,G11); V2 traverses (G11,G01); everything else disjoint
    scenario = make_grid_scenario(
        rows=2,
        cols=3,
        vehicles=[
            {"id": "V1", "depot": "G01", "nominal_speed": 1.0, "max_speed": 2.0, "range": 1000.0},
            {"id": "V2", "depot": "G11", "nominal_speed": 1.0, "max_speed": 2.0, "range": 1000.0},
        ],
        tasks=[
            {"id": "T1", "node": "G10", "capability": "V1"},
            {"id": "T2", "node": "G02", "capability": "V2"},
        ],
    )
    rs = route_set_from_legs(
        scenario,
        {
            "V1": [["G01", "G11", "G10"], ["G10", "G00", "G01"]],
            "V2": [["G11", "G01", "G02"], ["G02", "G12", "G11"]],
        },
        task_lookup={"G10": "T1", "G02": "T2"},
    )
    dtp = build_capacity_problem(rs, scenario)
    families = count_families(dtp)
    assert families == {"node-exclusion": 0, "edge-trailing": 0, "edge-head-on": 1}
    head = [d for d in dtp.disjunctions if d.family == "edge-head-on"][0]
    # clearing gap = |e|/speed + mu = 10/1 + 20
    assert head.first.gap == pytest.approx(30.0)


def test_forced_chain_earliest_solution():
    lengths = [5.0, 5.0]
    var_keys = [("arrival", "V", 0), ("entry", "V", 0), ("arrival", "V", 1), ("entry", "V", 1), ("arrival", "V", 2)]
    lower = [0.0, 0.0, 0.0, 0.0, 0.0]
    upper = [0.0, 100.0, 100.0, 100.0, 100.0]
    cons = []
    for i, tt in enumerate(lengths):
        x, y, x1 = 2 * i, 2 * i + 1, 2 * i + 2
        cons.append(DiffConstraint(hi=y, lo=x, gap=0.0))
        cons.append(DiffConstraint(hi=x1, lo=y, gap=tt))
        cons.append(DiffConstraint(hi=y, lo=x1, gap=-tt))
    dtp = DisjunctiveTemporalProblem(var_keys=var_keys, lower=lower, upper=upper, constraints=cons, disjunctions=[])
    assignment = solve_dtp(dtp)
    assert assignment is not None
    assert assignment[("arrival", "V", 0)] == pytest.approx(0.0)
    assert assignment[("arrival", "V", 1)] == pytest.approx(5.0)
    assert assignment[("arrival", "V", 2)] == pytest.approx(10.0)


def test_single_trailing_disjunction_shifts_one_vehicle():
    # two independent entry variables, both want t=0, one must trail by 20
    var_keys = [("entry", "A", 0), ("entry", "B", 0)]
    lower = [0.0, 0.0]
    upper = [100.0, 100.0]
    disj = Disjunction(
        first=DiffConstraint(hi=1, lo=0, gap=20.0),
        second=DiffConstraint(hi=0, lo=1, gap=20.0),
        family="edge-trailing",
        resource=("e", "A", 0, "B", 0),
    )
    dtp = DisjunctiveTemporalProblem(var_keys=var_keys, lower=lower, upper=upper, constraints=[], disjunctions=[disj])
    assignment = solve_dtp(dtp)
    assert assignment is not None
    times = sorted([assignment[("entry", "A", 0)], assignment[("entry", "B", 0)]])
    assert times[0] == pytest.approx(0.0)
    assert times[1] >= 20.0 - 1e-9


def random_dtp(rng: random.Random):
    n_vars = rng.randint(4, 9)
    horizon = 200.0
    lower = [0.0] * n_vars
    upper = [rng.uniform(40.0, horizon) for _ in range(n_vars)]
    var_keys = [("v", i) for i in range(n_vars)]
    constraints = []
    # a random chain backbone keeps instances structured
    order = list(range(n_vars))
    rng.shuffle(order)
    for a, b in zip(order, order[1:]):
        if rng.random() < 0.7:
            constraints.append(DiffConstraint(hi=b, lo=a, gap=rng.uniform(0.0, 30.0)))
    disjunctions = []
    for _ in range(rng.randint(0, 12)):
        a, b = rng.sample(range(n_vars), 2)
        disjunctions.append(
            Disjunction(
                first=DiffConstraint(hi=a, lo=b, gap=rng.uniform(5.0, 60.0)),
                second=DiffConstraint(hi=b, lo=a, gap=rng.uniform(5.0, 60.0)),
                family="edge-trailing",
                resource=(a, b),
            )
        )
    return DisjunctiveTemporalProblem(
        var_keys=var_keys, lower=lower, upper=upper, constraints=constraints, disjunctions=disjunctions
    )


def test_dtp_oracle_equivalence_200():
    rng = random.Random(123)
    solver_time = 0.0
    verdicts = {True: 0, False: 0}
    for _ in range(200):
        dtp = random_dtp(rng)
        t0 = time.perf_counter()
        got = solve_dtp(dtp) is not None
        solver_time += time.perf_counter() - t0
        expected = brute_force_dtp(dtp)
        assert got == expected
        verdicts[got] += 1
    assert verdicts[True] > 10 and verdicts[False] > 10  # both outcomes exercised
    assert solver_time < 5.0


def test_solution_satisfies_chosen_disjunctions():
    rng = random.Random(5)
    for _ in range(40):
        dtp = random_dtp(rng)
        assignment = solve_dtp(dtp)
        if assignment is None:
            continue
        values = [assignment[k] for k in dtp.var_keys]
        for c in dtp.constraints:
            assert values[c.hi] - values[c.lo] >= c.gap - 1e-6
        for d in dtp.disjunctions:
            ok1 = values[d.first.hi] - values[d.first.lo] >= d.first.gap - 1e-6
            ok2 = values[d.second.hi] - values[d.second.lo] >= d.second.gap - 1e-6
            assert ok1 or ok2
        for i, v in enumerate(values):
            assert dtp.lower[i] - 1e-9 <= v <= dtp.upper[i] + 1e-9


def test_extract_schedule_chain(small_scenario):
    endpoints = {v.depot for v in small_scenario.vehicles.values()} | {
        t.node for t in small_scenario.tasks.values()
    }
    table = all_pairs_shortest_paths(small_scenario.graph, endpoints)
    route_set = plan_routes(small_scenario, table)
    dtp = build_capacity_problem(route_set, small_scenario)
    assignment = solve_dtp(dtp)
    assert assignment is not None
    schedule = extract_schedule(assignment, route_set)
    by_vehicle = schedule.by_vehicle()
    for vid, entries in by_vehicle.items():
        times = [e.time for e in entries]
        assert times == sorted(times)
    report = verify_schedule(schedule, route_set, small_scenario)
    assert report.ok, str(report)


def test_extract_schedule_empty_route():
    scenario = make_grid_scenario(
        vehicles=[
            {"id": "V1", "depot": "G00", "nominal_speed": 1.0, "max_speed": 2.0, "range": 100.0,
             "capabilities": ["x"]},
            {"id": "V2", "depot": "G22", "nominal_speed": 1.0, "max_speed": 2.0, "range": 100.0},
        ],
        tasks=[{"id": "T1", "node": "G01", "capability": "x"}],
    )
    result = comsat_schedule(scenario)
    v2 = result.schedule.for_vehicle("V2")
    assert len(v2) == 2
    assert all(e.node == "G22" and e.time == 0.0 for e in v2)


def test_verify_schedule_flags_constructed_trailing_violation():
    # both vehicles traverse the directed narrow edge (G01,G11), entries
    # 10 s apart while mu = 20
    scenario = two_vehicle_scenario(
        "narrow",
        tasks=[
            {"id": "T1", "node": "G12", "capability": "V1"},
            {"id": "T2", "node": "G11", "capability": "V2"},
        ],
    )
    rs = route_set_from_legs(
        scenario,
        {
            "V1": [["G00", "G01", "G11", "G12"], ["G12", "G02", "G01", "G00"]],
            "V2": [["G02", "G01", "G11"], ["G11", "G12", "G02"]],
        },
        task_lookup={"G12": "T1", "G11": "T2"},
    )
    entries = [
        ScheduleEntry("V1", "G00", 0.0),
        ScheduleEntry("V1", "G01", 10.0),
        ScheduleEntry("V1", "G11", 20.0),
        ScheduleEntry("V1", "G12", 30.0),
        ScheduleEntry("V1", "G02", 40.0),
        ScheduleEntry("V1", "G01", 50.0),
        ScheduleEntry("V1", "G00", 60.0),
        ScheduleEntry("V2", "G02", 10.0),
        ScheduleEntry("V2", "G01", 20.0),
        ScheduleEntry("V2", "G11", 30.0),  # edge entry 20 vs V1's 10
        ScheduleEntry("V2", "G12", 40.0),
        ScheduleEntry("V2", "G02", 50.0),
    ]
    report = verify_schedule(Schedule(entries=entries), rs, scenario)
    trailing = [v for v in report.violations if v.family == "edge-trailing"]
    assert trailing
    target = [v for v in trailing if v.resource == "(G01,G11)"]
    assert target and target[0].magnitude == pytest.approx(10.0)


def test_verify_schedule_flags_horizon_and_chaining():
    scenario = two_vehicle_scenario(
        "narrow",
        tasks=[
            {"id": "T1", "node": "G01", "capability": "V1"},
            {"id": "T2", "node": "G12", "capability": "V2"},
        ],
    )
    rs = route_set_from_legs(
        scenario,
        {"V1": [["G00", "G01"], ["G01", "G00"]], "V2": [["G02", "G12"], ["G12", "G02"]]},
        task_lookup={"G01": "T1", "G12": "T2"},
    )
    entries = [
        ScheduleEntry("V1", "G00", 0.0),
        ScheduleEntry("V1", "G01", 5.0),  # travel needs 10 s: chaining violation
        ScheduleEntry("V1", "G00", 15.0),
        ScheduleEntry("V2", "G02", 0.0),
        ScheduleEntry("V2", "G12", 10.0),
        ScheduleEntry("V2", "G02", 700.0),  # beyond the horizon
    ]
    report = verify_schedule(Schedule(entries=entries), rs, scenario)
    families = {v.family for v in report.violations}
    assert "chaining" in families
    assert "horizon" in families


def test_verify_schedule_window_family(small_scenario):
    result = comsat_schedule(small_scenario)
    entries = list(result.schedule.entries)
    # push one task arrival outside its window by faking a huge delay
    tampered = []
    a4 = [e for e in entries if e.vehicle == "A4"]
    bump = {id(e): e for e in a4[3:]}  # from the first task onward
    for e in entries:
        if id(e) in bump:
            tampered.append(ScheduleEntry(e.vehicle, e.node, e.time + 590.0))
        else:
            tampered.append(e)
    report = verify_schedule(Schedule(entries=tampered), result.route_set, small_scenario)
    assert not report.ok
    assert {"window", "horizon"} & {v.family for v in report.violations}


def _single_task_route_set(scenario):
    rs = route_set_from_legs(
        scenario,
        {"V1": [["G00", "G01", "G11"], ["G11", "G10", "G00"]]},
        task_lookup={"G11": "T1"},
    )
    return rs


def test_path_changer_returns_detour_and_exhausts():
    scenario = make_grid_scenario(
        rows=2,
        cols=3,
        vehicles=[{"id": "V1", "depot": "G00", "nominal_speed": 1.0, "max_speed": 2.0, "range": 1000.0}],
        tasks=[{"id": "T1", "node": "G11"}],
    )
    rs = _single_task_route_set(scenario)
    changer = PathChanger(scenario, rs, budget=3)
    first = changer.next()
    assert first.total_distance >= rs.total_distance - 1e-9
    changed = [
        (vid, i)
        for vid in rs.routes
        for i, (old, new) in enumerate(zip(rs.legs[vid], first.legs[vid]))
        if old.nodes != new.nodes
    ]
    assert changed  # at least one leg substituted
    for alt in (first,):
        for paths in alt.legs.values():
            for path in paths:
                assert len(set(path.nodes)) == len(path.nodes)
    with pytest.raises(AlternativesExhausted):
        for _ in range(200):
            changer.next()


def test_path_changer_budget_one_exhausts_immediately():
    scenario = make_grid_scenario(
        rows=2,
        cols=3,
        vehicles=[{"id": "V1", "depot": "G00", "nominal_speed": 1.0, "max_speed": 2.0, "range": 1000.0}],
        tasks=[{"id": "T1", "node": "G11"}],
    )
    rs = _single_task_route_set(scenario)
    changer = PathChanger(scenario, rs, budget=1)
    with pytest.raises(AlternativesExhausted):
        changer.next()


def test_comsat_small_grid_sound(small_scenario):
    result = comsat_schedule(small_scenario)
    report = verify_schedule(result.schedule, result.route_set, small_scenario)
    assert report.ok, str(report)
    # determinism: identical scenario, identical output
    again = comsat_schedule(small_scenario)
    assert schedule_csv_text(again.schedule) == schedule_csv_text(result.schedule)


def test_comsat_infeasible_scenario():
    scenario = make_grid_scenario(
        vehicles=[
            {"id": "V1", "depot": "G00", "nominal_speed": 1.0, "max_speed": 2.0, "range": 100.0,
             "capabilities": ["lift"]}
        ],
        tasks=[{"id": "T1", "node": "G01", "capability": "crane"}],
    )
    with pytest.raises(SchedulingInfeasible) as exc:
        comsat_schedule(scenario)
    assert exc.value.cause.category == "no capable vehicle"


def test_schedule_document_roundtrip(small_scenario):
    result = comsat_schedule(small_scenario)
    doc = schedule_document(result.schedule, result.route_set)
    schedule, route_set = parse_schedule_document(doc)
    assert schedule_csv_text(schedule) == schedule_csv_text(result.schedule)
    report = verify_schedule(schedule, route_set, small_scenario)
    assert report.ok


def test_comsat_engages_path_changing_on_tight_horizon():
    # two robots must swap ends of a narrow corridor; serializing the
    # head-on conflicts blows the horizon, so the loop has to reroute one
    # of them through the second row
    scenario = make_grid_scenario(
        rows=2,
        cols=3,
        vehicles=[
            {"id": "V1", "depot": "G00", "nominal_speed": 1.0, "max_speed": 2.0, "range": 1000.0,
             "capabilities": ["V1"]},
            {"id": "V2", "depot": "G02", "nominal_speed": 1.0, "max_speed": 2.0, "range": 1000.0,
             "capabilities": ["V2"]},
        ],
        tasks=[
            {"id": "T1", "node": "G01", "capability": "V1"},
            {"id": "T2", "node": "G10", "capability": "V2"},
        ],
        horizon=70.0,
    )
    result = comsat_schedule(scenario)
    assert result.iterations > 1  # the first capacity problem was infeasible
    report = verify_schedule(result.schedule, result.route_set, scenario)
    assert report.ok, str(report)
    assert max(e.time for e in result.schedule.entries) <= 70.0 + 1e-6


def test_wide_edge_mu_flag_generates_trailing_disjunctions():
    scenario = two_vehicle_scenario(
        "wide",
        tasks=[
            {"id": "T1", "node": "G11", "capability": "V1"},
            {"id": "T2", "node": "G11", "capability": "V2"},
        ],
    )
    rs = route_set_from_legs(
        scenario,
        {
            "V1": [["G00", "G01", "G11"], ["G11", "G01", "G00"]],
            "V2": [["G02", "G01", "G11"], ["G11", "G01", "G02"]],
        },
        task_lookup={"G11": "T1"},
    )
    rs.routes["V2"] = Route(
        vehicle="V2",
        stops=(
            Stop(kind="depot", ref="G02", node="G02"),
            Stop(kind="task", ref="T2", node="G11"),
            Stop(kind="depot", ref="G02", node="G02"),
        ),
    )
    default = count_families(build_capacity_problem(rs, scenario))
    strict = count_families(build_capacity_problem(rs, scenario, wide_edge_mu=True))
    assert default["edge-trailing"] == 0
    assert strict["edge-trailing"] == 2  # both shared directed lanes
    assert strict["edge-head-on"] == 0  # head-on stays allowed on wide roads


def test_wide_edge_exact_tie_detection():
    from fleetsched.capacity_scheduler import _wide_edge_ties

    scenario = two_vehicle_scenario(
        "wide",
        tasks=[
            {"id": "T1", "node": "G11", "capability": "V1"},
            {"id": "T2", "node": "G11", "capability": "V2"},
        ],
    )
    rs = route_set_from_legs(
        scenario,
        {
            "V1": [["G00", "G01", "G11"], ["G11", "G01", "G00"]],
            "V2": [["G02", "G01", "G11"], ["G11", "G01", "G02"]],
        },
        task_lookup={"G11": "T1"},
    )
    rs.routes["V2"] = Route(
        vehicle="V2",
        stops=(
            Stop(kind="depot", ref="G02", node="G02"),
            Stop(kind="task", ref="T2", node="G11"),
            Stop(kind="depot", ref="G02", node="G02"),
        ),
    )
    entries = [
        ScheduleEntry("V1", "G00", 0.0),
        ScheduleEntry("V1", "G01", 10.0),
        ScheduleEntry("V1", "G11", 20.0),
        ScheduleEntry("V1", "G01", 30.0),
        ScheduleEntry("V1", "G00", 40.0),
        ScheduleEntry("V2", "G02", 0.0),
        ScheduleEntry("V2", "G01", 10.0),
        ScheduleEntry("V2", "G11", 20.0),  # identical entry time into (G01,G11)
        ScheduleEntry("V2", "G01", 30.0),
        ScheduleEntry("V2", "G02", 40.0),
    ]
    ties = _wide_edge_ties(Schedule(entries=entries), rs, scenario)
    assert ("V1", 1, "V2", 1) in ties or any(t[0] == "V1" and t[2] == "V2" for t in ties)


def test_randomized_scenarios_soundness():
    rng = random.Random(77)
    produced = 0
    for _ in range(22):
        scenario = random_grid_scenario(rng, n_vehicles=rng.randint(2, 3), n_tasks=rng.randint(3, 5),
                                        rows=3, cols=rng.randint(3, 4))
        try:
            result = comsat_schedule(scenario)
        except SchedulingInfeasible:
            continue
        report = verify_schedule(result.schedule, result.route_set, scenario)
        assert report.ok, str(report)
        produced += 1
    assert produced >= 12
