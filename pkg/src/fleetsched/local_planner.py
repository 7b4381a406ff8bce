"""Per-robot bridge between the time-stamped schedule and the controller.

A global reference trajectory is sampled once from the scheduled geometric
path at maximum speed.  At every control step the planner picks an anchor on
that trajectory (monotone, never backtracking), computes an urgency-based
desired speed from the time budget to the next scheduled node, and resamples
the next stretch of the global trajectory into a fixed-length local
reference for the controller.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PlannerParams:
    # fraction of max speed used as a lower bound on the commanded
    # reference speed, so early robots keep creeping instead of stalling
    speed_floor_frac: float = 0.05
    # distance (m) over which the reference speed ramps to zero at the
    # final stop, producing the deliberate slow-parking behaviour
    parking_ramp: float = 2.0
    # how far a robot may advance onto the next edge before its scheduled
    # entry time; beyond this it holds until the entry time arrives, so
    # waits do not leak deep into corridors other robots were promised
    edge_hold_back: float = 1.2
    # lateral pull-aside (to the robot's right) while holding, clearing the
    # lane for traffic that is scheduled through the same stretch
    hold_aside: float = 0.9
    # the anchor may not skip past a scheduled node until the robot has
    # come this close to it; keeps planner progress aligned with arrivals
    # even where out-and-back legs overlap geometrically
    node_pass_radius: float = 0.6

    _FIELDS = ("speed_floor_frac", "parking_ramp", "edge_hold_back", "hold_aside", "node_pass_radius")

    @classmethod
    def from_dict(cls, raw: dict) -> "PlannerParams":
        for key in raw:
            if key not in cls._FIELDS:
                raise ValueError(f"unknown planner parameter '{key}'")
        return cls(**{k: float(v) for k, v in raw.items()})

    def to_dict(self) -> dict:
        return {
            "speed_floor_frac": self.speed_floor_frac,
            "parking_ramp": self.parking_ramp,
            "edge_hold_back": self.edge_hold_back,
            "hold_aside": self.hold_aside,
            "node_pass_radius": self.node_pass_radius,
        }


@dataclass
class GlobalTrajectory:
    """Max-speed sampling of the scheduled geometric path.

    points[i] = (x, y, heading); node_marks[j] is the point index at which
    the j-th scheduled node sits (always an exact sample).
    """

    points: np.ndarray  # (M, 3)
    node_marks: list[int]
    max_speed: float
    dt: float
    cumdist: np.ndarray  # (M,) arc length from the start

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class ReferenceTrajectory:
    points: np.ndarray  # (N, 3)
    desired_speed: float


def wrap_angle(a: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a > math.pi:
        a -= 2.0 * math.pi
    elif a <= -math.pi:
        a += 2.0 * math.pi
    return a


def precompute_global(schedule_for_vehicle, graph, max_speed: float, dt: float) -> GlobalTrajectory:
    """Sample the scheduled path at arc steps of ``max_speed * dt``.

    ``schedule_for_vehicle`` is the ordered per-vehicle schedule (objects
    with ``node`` attributes, or plain node ids); ``graph`` supplies node
    positions.  Node positions are always exact samples, so marks line up
    with schedule entries; zero-length legs reuse the previous sample.
    """
    node_ids = [getattr(entry, "node", entry) for entry in schedule_for_vehicle]
    if not node_ids:
        raise ValueError("empty schedule")
    step = max_speed * dt
    if step <= 0:
        raise ValueError("max_speed and dt must be positive")

    positions = [graph.position(nid) for nid in node_ids]
    pts: list[tuple[float, float, float]] = [(positions[0][0], positions[0][1], 0.0)]
    marks = [0]
    for (ax, ay), (bx, by) in zip(positions, positions[1:]):
        leg = math.hypot(bx - ax, by - ay)
        if leg < 1e-12:
            marks.append(len(pts) - 1)
            continue
        heading = math.atan2(by - ay, bx - ax)
        # the corner sample takes the outgoing segment's bearing
        px, py, _ = pts[-1]
        pts[-1] = (px, py, heading)
        n_sub = max(1, math.ceil(leg / step - 1e-9))
        for j in range(1, n_sub + 1):
            f = j / n_sub
            pts.append((ax + f * (bx - ax), ay + f * (by - ay), heading))
        marks.append(len(pts) - 1)

    points = np.array(pts, dtype=float)
    deltas = np.hypot(np.diff(points[:, 0]), np.diff(points[:, 1]))
    cumdist = np.concatenate(([0.0], np.cumsum(deltas)))
    return GlobalTrajectory(points=points, node_marks=marks, max_speed=max_speed, dt=dt, cumdist=cumdist)


def desired_speed(t: float, t_next: float, dist_next: float, max_speed: float) -> float:
    """Urgency law: cover ``dist_next`` by ``t_next``, capped at max speed.

    When the budget is spent (t >= t_next) the division guard makes the
    demand infinite, so a late robot always runs at full speed.
    """
    if dist_next < 0:
        raise ValueError("dist_next must be >= 0")
    budget = t_next - t
    if budget <= 0.0:
        return max_speed
    return min(max_speed, dist_next / budget)


# Routes fold back on themselves (out-and-back legs share geometry), so the
# anchor search must stay local: the robot advances at most about one sample
# spacing per control step, and an unbounded forward search could lock onto a
# later, overlapping stretch of the path.  Ties resolve to the earlier index.
ANCHOR_WINDOW = 12


def find_anchor(
    traj: GlobalTrajectory,
    position,
    hint: int,
    window: int | None = ANCHOR_WINDOW,
    max_index: int | None = None,
) -> int:
    """Index of the global point nearest ``position``, at or after ``hint``."""
    hint = max(0, min(hint, len(traj) - 1))
    stop = len(traj) if window is None else min(len(traj), hint + window + 1)
    if max_index is not None:
        stop = min(stop, max(hint + 1, max_index + 1))
    tail = traj.points[hint:stop, :2]
    d2 = (tail[:, 0] - position[0]) ** 2 + (tail[:, 1] - position[1]) ** 2
    return hint + int(np.argmin(d2))


def resample_from_anchor(
    traj: GlobalTrajectory, anchor: int, speed: float, n_points: int, max_index: int | None = None
) -> ReferenceTrajectory:
    """Resample the stretch after ``anchor`` at the fractional stride
    speed/max_speed: a full-speed request returns exactly the next
    ``n_points`` global samples, slower requests interpolate between them,
    and past the end of the path (or ``max_index``) the last reachable
    sample is repeated."""
    ratio = speed / traj.max_speed
    pts = traj.points
    last = len(pts) - 1
    if max_index is not None:
        last = min(last, max_index)
    out = np.empty((n_points, 3), dtype=float)
    for j in range(n_points):
        idx = anchor + (j + 1) * ratio
        if idx >= last:
            out[j] = pts[last]
            continue
        i0 = int(idx)
        frac = idx - i0
        if frac == 0.0:
            out[j] = pts[i0]
            continue
        p0, p1 = pts[i0], pts[i0 + 1]
        out[j, 0] = p0[0] + frac * (p1[0] - p0[0])
        out[j, 1] = p0[1] + frac * (p1[1] - p0[1])
        out[j, 2] = p0[2] + frac * wrap_angle(p1[2] - p0[2])
    return ReferenceTrajectory(points=out, desired_speed=speed)


def local_reference(
    traj: GlobalTrajectory,
    position,
    index_hint: int,
    speed: float,
    n_points: int,
    dt: float,
    window: int | None = ANCHOR_WINDOW,
) -> ReferenceTrajectory:
    """Anchor forward of ``index_hint`` and resample at ``speed``."""
    anchor = find_anchor(traj, position, index_hint, window)
    return resample_from_anchor(traj, anchor, speed, n_points)


class LocalPlanner:
    """Stateful planner for one robot: owns the anchor and the next target.

    The target is the first scheduled node whose mark lies beyond the
    current anchor; passing a mark advances the target.  One planner
    instance serves exactly one robot.
    """

    def __init__(
        self,
        traj: GlobalTrajectory,
        schedule_times: list[float],
        n_points: int,
        params: PlannerParams | None = None,
        nominal_speed: float | None = None,
    ):
        if len(schedule_times) != len(traj.node_marks):
            raise ValueError("schedule_times must align with trajectory node marks")
        self.traj = traj
        self.times = list(schedule_times)
        self.n_points = n_points
        self.params = params or PlannerParams()
        self.nominal_speed = nominal_speed if nominal_speed is not None else traj.max_speed
        self.anchor = 0
        self.last_speed = 0.0
        self.holding = False

    @property
    def finished_path(self) -> bool:
        return self.anchor >= len(self.traj) - 1

    def _target_index(self) -> int:
        marks = self.traj.node_marks
        for j, mark in enumerate(marks):
            if mark > self.anchor:
                return j
        return len(marks) - 1

    def step(self, position, t: float) -> tuple[ReferenceTrajectory, dict]:
        """Compute the local reference for the current position and time."""
        traj = self.traj
        marks = traj.node_marks
        # the anchor stops strictly before the next scheduled node's mark
        # until the robot has actually come within the pass radius of that
        # node; once there it may cross, but not beyond the following mark
        gate = self._target_index()
        gate_mark = marks[gate]
        gx, gy = traj.points[gate_mark, 0], traj.points[gate_mark, 1]
        if math.hypot(position[0] - gx, position[1] - gy) <= self.params.node_pass_radius:
            following = [m for m in marks if m > gate_mark]
            cap = following[0] - 1 if following else None
        else:
            cap = gate_mark - 1
        self.anchor = find_anchor(traj, position, self.anchor, max_index=cap)
        # the reference likewise must not pull past an unpassed node
        ref_cap = None if cap is None else cap + 1
        target = self._target_index()
        dist_next = float(traj.cumdist[marks[target]] - traj.cumdist[self.anchor])
        speed = desired_speed(t, self.times[target], dist_next, traj.max_speed)
        speed = max(speed, self.params.speed_floor_frac * traj.max_speed)
        # hold just past the previous node while the current edge's
        # scheduled entry time has not come yet, pulled over to the right
        # so the lane stays clear for traffic scheduled through it
        self.holding = False
        if target >= 1:
            leg = float(traj.cumdist[marks[target]] - traj.cumdist[marks[target - 1]])
            if leg > 1e-9:
                entry_time = self.times[target] - leg / self.nominal_speed
                advance = float(traj.cumdist[self.anchor] - traj.cumdist[marks[target - 1]])
                if t < entry_time - 1e-9 and advance >= min(self.params.edge_hold_back, 0.5 * leg):
                    self.holding = True
        # slow parking on the final approach
        dist_to_end = float(traj.cumdist[-1] - traj.cumdist[self.anchor])
        if target == len(marks) - 1 and dist_to_end < self.params.parking_ramp:
            speed = min(speed, traj.max_speed * dist_to_end / self.params.parking_ramp)
        if len(traj) == 1:
            speed = 0.0
        if self.holding:
            speed = 0.0
            ax, ay, heading = traj.points[self.anchor]
            aside = self.params.hold_aside
            lay_by = (ax + aside * math.sin(heading), ay - aside * math.cos(heading))
            pts = np.tile([lay_by[0], lay_by[1], heading], (self.n_points, 1))
            ref = ReferenceTrajectory(points=pts, desired_speed=0.0)
        else:
            ref = resample_from_anchor(traj, self.anchor, speed, self.n_points, max_index=ref_cap)
        self.last_speed = speed
        info = {
            "anchor": self.anchor,
            "target": target,
            "dist_next": dist_next,
            "speed": speed,
            "holding": self.holding,
        }
        return ref, info
