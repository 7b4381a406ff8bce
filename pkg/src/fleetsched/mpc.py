"""Receding-horizon trajectory-tracking controller for a unicycle robot.

The controller minimizes, over an action sequence of length N, the sum of a
reference-tracking cost, a polygonal-obstacle penalty, and a pairwise fleet
separation penalty, subject to hard box bounds on actions and action rates.
It is solved with projected gradient descent: gradients are computed
analytically by backward recursion through the rollout, steps are accepted
only when the objective decreases, and bounds are enforced exactly by a
forward clipping pass (never penalized).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class NonFiniteError(RuntimeError):
    """Cost or gradient overflowed; the caller should fall back to braking."""


@dataclass(frozen=True)
class RobotState:
    x: float
    y: float
    heading: float  # wrapped to (-pi, pi]

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.heading], dtype=float)


@dataclass(frozen=True)
class Action:
    v: float  # linear speed, m/s
    omega: float  # angular rate, rad/s

    def as_array(self) -> np.ndarray:
        return np.array([self.v, self.omega], dtype=float)


@dataclass(frozen=True)
class NeighborPlan:
    vehicle: str
    positions: np.ndarray  # (N, 2) predicted positions over the horizon


@dataclass(frozen=True)
class MpcParams:
    n_horizon: int = 20
    dt: float = 0.1
    q_state: tuple[float, float, float] = (12.0, 12.0, 2.0)
    q_action: tuple[float, float] = (1.0, 0.5)
    q_rate: tuple[float, float] = (2.0, 1.0)
    q_fleet: float = 300.0
    d_fleet: float = 1.0
    u_min: tuple[float, float] = (0.0, -2.0)
    u_max: tuple[float, float] = (2.0, 2.0)
    du_min: tuple[float, float] = (-2.0, -6.0)  # per second
    du_max: tuple[float, float] = (2.0, 6.0)
    obstacle_weight: float = 5000.0
    obstacle_inflation: float = 0.35
    solver_tol: float = 1e-4
    max_iterations: int = 60

    _FIELDS = (
        "n_horizon",
        "dt",
        "q_state",
        "q_action",
        "q_rate",
        "q_fleet",
        "d_fleet",
        "u_min",
        "u_max",
        "du_min",
        "du_max",
        "obstacle_weight",
        "obstacle_inflation",
        "solver_tol",
        "max_iterations",
    )

    def __post_init__(self) -> None:
        if self.n_horizon < 2:
            raise ValueError("n_horizon must be >= 2")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if any(w < 0 for w in (*self.q_state, *self.q_action, *self.q_rate, self.q_fleet)):
            raise ValueError("weights must be nonnegative")
        if any(lo > hi for lo, hi in zip(self.u_min, self.u_max)):
            raise ValueError("u_min must not exceed u_max")
        if any(lo > 0 or hi < 0 for lo, hi in zip(self.du_min, self.du_max)):
            raise ValueError("rate bounds must bracket zero")
        if self.d_fleet <= 0 or self.obstacle_inflation < 0:
            raise ValueError("d_fleet must be > 0 and obstacle_inflation >= 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    @classmethod
    def from_dict(cls, raw: dict, default_dt: float | None = None) -> "MpcParams":
        for key in raw:
            if key not in cls._FIELDS:
                raise ValueError(f"unknown mpc parameter '{key}'")
        kwargs: dict = {}
        for key, value in raw.items():
            if key in ("n_horizon", "max_iterations"):
                kwargs[key] = int(value)
            elif isinstance(value, (list, tuple)):
                kwargs[key] = tuple(float(v) for v in value)
            else:
                kwargs[key] = float(value)
        if "dt" not in kwargs and default_dt is not None:
            kwargs["dt"] = float(default_dt)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {
            "n_horizon": self.n_horizon,
            "dt": self.dt,
            "q_state": list(self.q_state),
            "q_action": list(self.q_action),
            "q_rate": list(self.q_rate),
            "q_fleet": self.q_fleet,
            "d_fleet": self.d_fleet,
            "u_min": list(self.u_min),
            "u_max": list(self.u_max),
            "du_min": list(self.du_min),
            "du_max": list(self.du_max),
            "obstacle_weight": self.obstacle_weight,
            "obstacle_inflation": self.obstacle_inflation,
            "solver_tol": self.solver_tol,
            "max_iterations": self.max_iterations,
        }


def wrap_angle(a: float) -> float:
    a = math.fmod(a, 2.0 * math.pi)
    if a > math.pi:
        a -= 2.0 * math.pi
    elif a <= -math.pi:
        a += 2.0 * math.pi
    return a


def motion_model(state, action, dt: float) -> RobotState:
    """Unicycle Euler step."""
    x, y, th = (state.x, state.y, state.heading) if isinstance(state, RobotState) else state
    v, om = (action.v, action.omega) if isinstance(action, Action) else action
    return RobotState(
        x=x + v * math.cos(th) * dt,
        y=y + v * math.sin(th) * dt,
        heading=wrap_angle(th + om * dt),
    )


# ---------------------------------------------------------------------------
# cost terms


def _weighted_sq(err: np.ndarray, weights) -> float:
    w = np.asarray(weights, dtype=float)
    return float(np.dot(w * err, err))


def cost_reference(s, s_ref, u, u_ref, u_prev, q_state, q_action, q_rate) -> float:
    """Tracking cost: state error + action error + action-change error."""
    s = np.asarray(s, dtype=float)
    s_ref = np.asarray(s_ref, dtype=float)
    err = s - s_ref
    err[2] = wrap_angle(err[2])
    u = np.asarray(u, dtype=float)
    return (
        _weighted_sq(err, q_state)
        + _weighted_sq(u - np.asarray(u_ref, dtype=float), q_action)
        + _weighted_sq(u - np.asarray(u_prev, dtype=float), q_rate)
    )


def _poly_vertices(obstacle) -> np.ndarray:
    verts = getattr(obstacle, "vertices", obstacle)
    return np.asarray(verts, dtype=float)


def points_in_polygon(points: np.ndarray, verts: np.ndarray) -> np.ndarray:
    """Ray-casting containment test for a batch of points."""
    x = points[:, 0]
    y = points[:, 1]
    inside = np.zeros(len(points), dtype=bool)
    n = len(verts)
    for i in range(n):
        x1, y1 = verts[i]
        x2, y2 = verts[(i + 1) % n]
        crosses = (y1 > y) != (y2 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_at = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (x < np.where(crosses, x_at, np.inf))
    return inside


def polygon_signed_distance(points, obstacle) -> tuple[np.ndarray, np.ndarray]:
    """Signed distance (negative inside) and closest boundary point.

    Accepts an (N, 2) batch; returns (N,) distances and (N, 2) closest
    points on the polygon boundary.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    verts = _poly_vertices(obstacle)
    n = len(verts)
    a = verts
    b = np.roll(verts, -1, axis=0)
    ab = b - a  # (E, 2)
    ab_sq = np.maximum(np.einsum("ij,ij->i", ab, ab), 1e-300)
    # (N, E) projection parameter, clamped to the segment
    diff = pts[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("nej,ej->ne", diff, ab) / ab_sq, 0.0, 1.0)
    proj = a[None, :, :] + t[:, :, None] * ab[None, :, :]
    d2 = np.sum((pts[:, None, :] - proj) ** 2, axis=2)
    best = np.argmin(d2, axis=1)
    rows = np.arange(len(pts))
    closest = proj[rows, best]
    dist = np.sqrt(d2[rows, best])
    sign = np.where(points_in_polygon(pts, verts), -1.0, 1.0)
    return sign * dist, closest


def cost_obstacle(z, obstacles, weight: float, inflation: float) -> float:
    """Hinge penalty on the inflated signed distance to each polygon."""
    z = np.asarray(z, dtype=float).reshape(1, 2)
    total = 0.0
    for obstacle in obstacles:
        sd, _ = polygon_signed_distance(z, obstacle)
        gap = inflation - sd[0]
        if gap > 0.0:
            total += weight * gap * gap
    return total


def cost_fleet(z_i, z_j, q_fleet: float, d_fleet: float) -> float:
    """Quadratic penetration penalty below the fleet separation distance."""
    sep = math.dist(tuple(z_i), tuple(z_j))
    gap = d_fleet - sep
    return q_fleet * gap * gap if gap > 0.0 else 0.0


# ---------------------------------------------------------------------------
# solver


@dataclass
class MpcSolution:
    actions: np.ndarray  # (N, 2)
    positions: np.ndarray  # (N, 2) rolled-out positions after each action
    cost: float
    costs: list[float] = field(default_factory=list)  # accepted objective values
    iterations: int = 0


def project_actions(actions: np.ndarray, u_prev: np.ndarray, params: MpcParams) -> np.ndarray:
    """Clip each action into the box and the rate corridor from its predecessor."""
    dt = params.dt
    v_lo, w_lo = params.u_min
    v_hi, w_hi = params.u_max
    dv_lo, dw_lo = params.du_min[0] * dt, params.du_min[1] * dt
    dv_hi, dw_hi = params.du_max[0] * dt, params.du_max[1] * dt
    out = np.empty_like(actions)
    pv, pw = float(u_prev[0]), float(u_prev[1])
    for k in range(len(actions)):
        v = min(max(actions[k, 0], max(v_lo, pv + dv_lo)), min(v_hi, pv + dv_hi))
        w = min(max(actions[k, 1], max(w_lo, pw + dw_lo)), min(w_hi, pw + dw_hi))
        out[k, 0] = v
        out[k, 1] = w
        pv, pw = v, w
    return out


def _rollout(state0: np.ndarray, actions: np.ndarray, dt: float) -> np.ndarray:
    """States s_0..s_N (inclusive), headings wrapped like motion_model."""
    n = len(actions)
    states = np.empty((n + 1, 3), dtype=float)
    states[0] = state0
    x, y, th = state0
    for k in range(n):
        v, om = actions[k]
        x += v * math.cos(th) * dt
        y += v * math.sin(th) * dt
        th = wrap_angle(th + om * dt)
        states[k + 1] = (x, y, th)
    return states


def _evaluate(
    actions: np.ndarray,
    state0: np.ndarray,
    u_prev: np.ndarray,
    ref: np.ndarray,
    u_ref: np.ndarray,
    neighbor_positions: list[np.ndarray],
    obstacle_entries: list[tuple[np.ndarray, np.ndarray, np.ndarray]],
    params: MpcParams,
    need_grad: bool,
) -> tuple[float, np.ndarray | None]:
    n = params.n_horizon
    dt = params.dt
    qs = np.asarray(params.q_state)
    qu = np.asarray(params.q_action)
    qa = np.asarray(params.q_rate)

    states = _rollout(state0, actions, dt)
    pred = states[1:]  # s_1..s_N tracked against ref_0..ref_{N-1}
    err = pred - ref
    err[:, 2] = np.remainder(err[:, 2] + math.pi, 2.0 * math.pi) - math.pi

    prev_actions = np.vstack([u_prev, actions[:-1]])
    du = actions - prev_actions
    ue = actions - u_ref

    cost = float(np.sum(qs * err * err) + np.sum(qu * ue * ue) + np.sum(qa * du * du))

    # positional stage gradients accumulate here (w.r.t. s_1..s_N)
    grad_pos = np.zeros((n, 2)) if need_grad else None

    pos = pred[:, :2]
    margin = params.obstacle_inflation
    roll_lo = pos.min(axis=0)
    roll_hi = pos.max(axis=0)
    for verts, box_lo, box_hi in obstacle_entries:
        # hinge is certainly inactive when the rollout stays clear of the
        # inflated bounding box, which is the common case
        if (
            roll_lo[0] > box_hi[0] + margin
            or roll_hi[0] < box_lo[0] - margin
            or roll_lo[1] > box_hi[1] + margin
            or roll_hi[1] < box_lo[1] - margin
        ):
            continue
        sd, closest = polygon_signed_distance(pos, verts)
        gap = margin - sd
        active = gap > 0.0
        if not np.any(active):
            continue
        cost += params.obstacle_weight * float(np.sum(gap[active] ** 2))
        if need_grad:
            delta = pos - closest
            norm = np.linalg.norm(delta, axis=1)
            ok = active & (norm > 1e-12)
            direction = np.zeros_like(delta)
            direction[ok] = delta[ok] / norm[ok, None]
            direction[sd < 0.0] *= -1.0  # inside: distance decreases away from boundary
            grad_pos[ok] += (-2.0 * params.obstacle_weight * gap[ok])[:, None] * direction[ok]

    for nbr in neighbor_positions:
        delta = pos - nbr
        sep = np.sqrt(np.sum(delta * delta, axis=1))
        gap = params.d_fleet - sep
        active = gap > 0.0
        if not np.any(active):
            continue
        cost += params.q_fleet * float(np.sum(gap[active] ** 2))
        if need_grad:
            ok = active & (sep > 1e-12)
            grad_pos[ok] += (-2.0 * params.q_fleet * gap[ok] / sep[ok])[:, None] * delta[ok]

    if not math.isfinite(cost):
        raise NonFiniteError("MPC cost is not finite")
    if not need_grad:
        return cost, None

    grad_u = 2.0 * qu * ue + 2.0 * qa * du
    grad_u[:-1] -= 2.0 * qa * du[1:]

    # backward pass through the rollout
    gs = np.zeros(3)
    for k in range(n - 1, -1, -1):
        stage = 2.0 * qs * err[k]
        stage[:2] += grad_pos[k]
        g = gs + stage  # dJ/ds_{k+1}
        v, _ = actions[k]
        th = states[k, 2]
        sin_t, cos_t = math.sin(th), math.cos(th)
        grad_u[k, 0] += (cos_t * g[0] + sin_t * g[1]) * dt
        grad_u[k, 1] += g[2] * dt
        gs = np.array(
            [
                g[0],
                g[1],
                (-v * sin_t * g[0] + v * cos_t * g[1]) * dt + g[2],
            ]
        )
    if not np.all(np.isfinite(grad_u)):
        raise NonFiniteError("MPC gradient is not finite")
    return cost, grad_u


def shift_warm_start(actions: np.ndarray) -> np.ndarray:
    """Shift the previous solution by one step, duplicating the last action."""
    return np.vstack([actions[1:], actions[-1:]])


def solve_mpc(
    state,
    u_prev,
    ref,
    neighbors: list[NeighborPlan],
    obstacles,
    params: MpcParams,
    warm_start: np.ndarray | None = None,
) -> MpcSolution:
    """Minimize the horizon cost with projected gradient descent.

    ``ref`` carries N reference points and the desired speed; the reference
    action is (desired_speed, 0).  The returned action sequence satisfies
    the box and rate bounds exactly.  Only accepted (strictly improving)
    iterates are kept, so the recorded objective values are non-increasing.
    """
    n = params.n_horizon
    state0 = state.as_array() if isinstance(state, RobotState) else np.asarray(state, dtype=float)
    u_prev = u_prev.as_array() if isinstance(u_prev, Action) else np.asarray(u_prev, dtype=float)
    ref_points = np.asarray(ref.points, dtype=float)
    if ref_points.shape != (n, 3):
        raise ValueError(f"reference must have shape ({n}, 3)")
    u_ref = np.array([ref.desired_speed, 0.0])

    neighbor_positions = [np.asarray(nb.positions, dtype=float) for nb in neighbors]
    obstacle_entries = []
    for ob in obstacles:
        verts = _poly_vertices(ob)
        obstacle_entries.append((verts, verts.min(axis=0), verts.max(axis=0)))

    if warm_start is None:
        warm_start = np.tile(u_ref, (n, 1))
    actions = project_actions(np.asarray(warm_start, dtype=float).reshape(n, 2), u_prev, params)

    def evaluate(u: np.ndarray, need_grad: bool):
        return _evaluate(
            u, state0, u_prev, ref_points, u_ref, neighbor_positions, obstacle_entries, params, need_grad
        )

    cost, grad = evaluate(actions, True)
    costs = [cost]
    step = 0.5
    iterations = 0
    for _ in range(params.max_iterations):
        iterations += 1
        improved = False
        for _ in range(30):
            candidate = project_actions(actions - step * grad, u_prev, params)
            cand_cost, _ = evaluate(candidate, False)
            if cand_cost < cost - 1e-12:
                improved = True
                break
            step *= 0.5
            if step < 1e-12:
                break
        if not improved:
            break
        gain = cost - cand_cost
        actions, cost = candidate, cand_cost
        costs.append(cost)
        step = min(step * 2.0, 1e3)
        if gain <= params.solver_tol * max(1.0, abs(cost)):
            break
        _, grad = evaluate(actions, True)

    states = _rollout(state0, actions, params.dt)
    return MpcSolution(
        actions=actions,
        positions=states[1:, :2].copy(),
        cost=cost,
        costs=costs,
        iterations=iterations,
    )
