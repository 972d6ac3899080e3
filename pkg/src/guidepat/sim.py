"""Synthetic optimal-style guidance runs: visibility routing, pure pursuit,
speed profile with ramp/coast/brake regimes, and grid dataset generation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    AgentState,
    Dataset,
    Environment,
    Trajectory,
    point_in_polygon,
    segment_polygon_distance,
    wrap_angle,
)


class InfeasibleStartError(ValueError):
    pass


class NoRouteError(RuntimeError):
    pass


class EmptyDatasetError(RuntimeError):
    pass


@dataclass(frozen=True)
class GuidancePolicy:
    """Waypoint route plus pursuit and speed-profile parameters.

    route: (M, 2) positions, last row is the goal position.
    """

    route: np.ndarray
    pursuit_gain: float
    v_cruise: float
    a_max: float
    d_brake: float
    omega_max: float
    switch_radius: float

    def __post_init__(self):
        object.__setattr__(self, "route", np.asarray(self.route, dtype=float))
        if len(self.route) == 0:
            raise ValueError("route must be non-empty")
        min_brake = self.v_cruise**2 / (2.0 * self.a_max)
        if self.d_brake < min_brake - 1e-9:
            raise ValueError(
                f"d_brake {self.d_brake} shorter than v_cruise^2/(2 a_max) = {min_brake}"
            )


def _corner_bisectors(env: Environment):
    for oi, obs in enumerate(env.obstacles):
        n = len(obs)
        for vi in range(n):
            prev_v = obs[(vi - 1) % n]
            v = obs[vi]
            next_v = obs[(vi + 1) % n]
            e_in = v - prev_v
            e_out = next_v - v
            e_in = e_in / np.hypot(*e_in)
            e_out = e_out / np.hypot(*e_out)
            # outward bisector of a CCW convex corner
            bis = e_in - e_out
            norm = np.hypot(*bis)
            if norm < 1e-12:
                bis = np.array([e_in[1], -e_in[0]])
                norm = 1.0
            bis = bis / norm
            half = 0.5 * math.acos(float(np.clip(-e_in @ e_out, -1.0, 1.0)))
            yield oi, vi, v, bis, half


def inflated_vertices(env: Environment, margin: float) -> list:
    """Obstacle corners pushed outward so a route through them keeps
    `margin` clearance from both adjacent edges.

    Returns (obstacle_index, vertex_index, xy) in lexicographic order.
    """
    return [
        (oi, vi, v + (margin / max(math.sin(half), 1e-6)) * bis)
        for oi, vi, v, bis, half in _corner_bisectors(env)
    ]


def vertex_pass_points(env: Environment, margin: float) -> list:
    """Corner points at exactly `margin` clearance along the bisector: where
    margin-respecting shortest paths hug the corner (the rounded inflation
    bulge, closer in than the route waypoint at sharp corners).
    """
    return [
        (oi, vi, v + margin * bis) for oi, vi, v, bis, half in _corner_bisectors(env)
    ]


def _leg_clear(a, b, env: Environment, margin: float) -> bool:
    pad = margin * (1.0 - 1e-9)
    return all(segment_polygon_distance(a, b, obs) >= pad for obs in env.obstacles)


def plan_route(env: Environment, start: AgentState, margin: float) -> np.ndarray:
    """Shortest collision-free waypoint chain start -> goal over the
    visibility graph of margin-inflated obstacle corners.

    Returns (M, 2) waypoints excluding the start, ending at the goal.
    Equal-length routes break toward the lexicographically smaller vertex
    index sequence.
    """
    start_p = start.position
    goal_p = env.goal.position
    for obs in env.obstacles:
        if (
            point_in_polygon(start_p, obs)
            or segment_polygon_distance(start_p, start_p, obs) < margin * (1.0 - 1e-9)
        ):
            raise InfeasibleStartError(f"start {tuple(start_p)} inside inflated obstacle")

    nodes = [start_p] + [xy for _, _, xy in inflated_vertices(env, margin)] + [goal_p]
    n = len(nodes)
    goal_idx = n - 1

    adj = [[] for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if _leg_clear(nodes[i], nodes[j], env, margin):
                d = float(np.hypot(*(nodes[j] - nodes[i])))
                adj[i].append((j, d))
                adj[j].append((i, d))

    import heapq

    dist = [math.inf] * n
    parent = [-1] * n
    dist[0] = 0.0
    heap = [(0.0, 0)]
    settled = [False] * n
    while heap:
        d, u = heapq.heappop(heap)
        if settled[u]:
            continue
        settled[u] = True
        for v, w in adj[u]:
            nd = d + w
            if nd < dist[v] - 1e-12:
                dist[v] = nd
                parent[v] = u
                heapq.heappush(heap, (nd, v))
            elif abs(nd - dist[v]) <= 1e-12 and parent[v] >= 0 and u < parent[v]:
                parent[v] = u  # tie-break toward the smaller vertex index

    if not math.isfinite(dist[goal_idx]):
        raise NoRouteError("goal not reachable from start on the visibility graph")

    chain = []
    node = goal_idx
    while node != 0:
        chain.append(node)
        node = parent[node]
    chain.reverse()
    return np.array([nodes[k] for k in chain])


def _pursuit_control(state, policy: GuidancePolicy, wp_index: int, dt: float) -> tuple:
    x, y, v, psi = state
    route = policy.route
    target = route[wp_index]
    bearing = math.atan2(target[1] - y, target[0] - x)
    err = wrap_angle(bearing - psi)
    omega = float(np.clip(policy.pursuit_gain * err, -policy.omega_max, policy.omega_max))

    # distance left along the remaining route, used for the brake ramp
    d_remaining = math.hypot(target[0] - x, target[1] - y)
    for k in range(wp_index, len(route) - 1):
        d_remaining += float(np.hypot(*(route[k + 1] - route[k])))
    if d_remaining <= policy.d_brake:
        v_des = min(policy.v_cruise, math.sqrt(max(0.0, 2.0 * policy.a_max * d_remaining)))
    else:
        v_des = policy.v_cruise
    a = float(np.clip((v_des - v) / dt, -policy.a_max, policy.a_max))
    return omega, a


def _rk4_step(state, omega: float, a: float, dt: float):
    def f(s):
        return np.array([s[2] * math.cos(s[3]), s[2] * math.sin(s[3]), a, omega])

    k1 = f(state)
    k2 = f(state + 0.5 * dt * k1)
    k3 = f(state + 0.5 * dt * k2)
    k4 = f(state + dt * k3)
    out = state + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    out[2] = max(out[2], 0.0)
    out[3] = wrap_angle(out[3])
    return out


def simulate_closed_loop(
    env: Environment,
    start: AgentState,
    policy: GuidancePolicy,
    dt: float,
    t_max: float,
) -> Trajectory:
    """Fixed-step RK4 unicycle run under pure pursuit toward the active
    waypoint. Terminates inside goal_tolerance or at t_max (flagged).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    state = start.as_array().copy()
    states = [state.copy()]
    controls = []
    wp_index = 0
    route = policy.route
    goal_p = route[-1]
    reached = False
    n_steps = int(math.ceil(t_max / dt))
    for _ in range(n_steps):
        while wp_index < len(route) - 1 and math.hypot(
            route[wp_index][0] - state[0], route[wp_index][1] - state[1]
        ) <= policy.switch_radius:
            wp_index += 1
        omega, a = _pursuit_control(state, policy, wp_index, dt)
        controls.append([omega, a])
        state = _rk4_step(state, omega, a, dt)
        states.append(state.copy())
        if math.hypot(goal_p[0] - state[0], goal_p[1] - state[1]) <= env.goal_tolerance:
            reached = True
            break
    controls.append([0.0, 0.0])
    return Trajectory(
        dt=dt,
        states=np.array(states),
        controls=np.array(controls),
        reached_goal=reached,
    )


def trajectory_hits_obstacle(traj: Trajectory, env: Environment) -> bool:
    return any(env.point_in_obstacle(p) for p in traj.positions)


@dataclass
class GridSpec:
    """Start grid: nx-by-ny positions inside bounds (with margin) times
    `headings` evenly spaced course angles starting at heading_origin.
    """

    nx: int
    ny: int
    headings: int
    margin: float = 1.0
    heading_origin: float = math.pi / 2
    x_range: tuple = None
    y_range: tuple = None

    def points(self, env: Environment) -> np.ndarray:
        xmin, ymin, xmax, ymax = env.bounds
        x_lo, x_hi = self.x_range if self.x_range else (xmin + self.margin, xmax - self.margin)
        y_lo, y_hi = self.y_range if self.y_range else (ymin + self.margin, ymax - self.margin)
        xs = np.linspace(x_lo, x_hi, self.nx)
        ys = np.linspace(y_lo, y_hi, self.ny)
        return xs, ys

    def spacing(self, env: Environment) -> float:
        xs, ys = self.points(env)
        dx = xs[1] - xs[0] if len(xs) > 1 else 1.0
        dy = ys[1] - ys[0] if len(ys) > 1 else 1.0
        return float(min(dx, dy))

    def heading_values(self) -> np.ndarray:
        return np.array(
            [wrap_angle(self.heading_origin + k * 2 * math.pi / self.headings) for k in range(self.headings)]
        )


def generate_dataset(
    env: Environment,
    grid: GridSpec,
    policy_for_start,
    seed: int,
    dt: float = 0.05,
    t_max: float = 120.0,
    perturb_frac: float = 0.05,
) -> Dataset:
    """One trajectory per feasible grid start, deterministic per seed.

    `policy_for_start` maps a perturbed AgentState to a GuidancePolicy
    (normally a plan_route + config closure). The seed jitters start
    positions by at most perturb_frac of the grid spacing so exactly
    symmetric ties cannot occur.
    """
    rng = np.random.default_rng(seed)
    xs, ys = grid.points(env)
    spacing = grid.spacing(env)
    headings = grid.heading_values()
    trajectories = []
    starts = []
    for xi in xs:
        for yi in ys:
            for h in headings:
                jitter = rng.uniform(-perturb_frac * spacing, perturb_frac * spacing, size=2)
                p = np.array([xi, yi]) + jitter
                state = AgentState(float(p[0]), float(p[1]), 0.0, float(h))
                starts.append(state)

    for state in starts:
        try:
            policy = policy_for_start(state)
        except (InfeasibleStartError, NoRouteError):
            continue
        traj = simulate_closed_loop(env, state, policy, dt, t_max)
        if not traj.reached_goal:
            raise RuntimeError(
                f"start {state} timed out before reaching the goal; retune the scenario"
            )
        if trajectory_hits_obstacle(traj, env):
            raise RuntimeError(f"start {state} produced a colliding trajectory")
        trajectories.append(traj)

    if not trajectories:
        raise EmptyDatasetError("no feasible starts on the grid")
    return Dataset(
        env=env,
        trajectories=trajectories,
        provenance={"seed": seed, "env_digest": env.digest(), "n_starts": len(trajectories)},
    )
