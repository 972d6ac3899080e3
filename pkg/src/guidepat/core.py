"""Shared domain types, planar geometry, and numeric conventions.

State convention: x east (m), y north (m), v speed (m/s), psi course angle
(rad, wrapped to (-pi, pi], 0 = east, counterclockwise positive).
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TAU = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Wrap a finite angle to (-pi, pi]."""
    if not math.isfinite(theta):
        raise ValueError(f"angle must be finite, got {theta!r}")
    wrapped = math.remainder(theta, TAU)
    if wrapped <= -math.pi:
        wrapped += TAU
    return wrapped


def angle_diff(a: float, b: float) -> float:
    """Signed difference a - b wrapped to (-pi, pi]."""
    return wrap_angle(a - b)


@dataclass(frozen=True)
class AgentState:
    """Planar pose plus speed."""

    x: float
    y: float
    v: float
    psi: float

    def __post_init__(self):
        if self.v < 0:
            raise ValueError(f"speed must be nonnegative, got {self.v}")
        object.__setattr__(self, "psi", wrap_angle(self.psi))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.v, self.psi])

    @staticmethod
    def from_array(arr) -> "AgentState":
        x, y, v, psi = (float(c) for c in arr)
        return AgentState(x, y, max(v, 0.0), psi)

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "v": self.v, "psi": self.psi}

    @staticmethod
    def from_dict(d: dict) -> "AgentState":
        return AgentState(float(d["x"]), float(d["y"]), float(d["v"]), float(d["psi"]))


@dataclass(frozen=True)
class ControlInput:
    """Turn rate (rad/s) and tangential acceleration (m/s^2)."""

    omega: float
    a: float

    def as_array(self) -> np.ndarray:
        return np.array([self.omega, self.a])


@dataclass(frozen=True)
class EnvRelativeState:
    """Agent-centric displacements, derived on demand from state + environment."""

    to_goal: np.ndarray
    to_nearest_vertex: np.ndarray


# ---------------------------------------------------------------------------
# Convex polygon geometry


def polygon_area(verts: np.ndarray) -> float:
    x, y = verts[:, 0], verts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def polygon_is_convex_ccw(verts: np.ndarray, tol: float = 1e-12) -> bool:
    """Strict convexity with counterclockwise winding."""
    n = len(verts)
    if n < 3:
        return False
    for i in range(n):
        a, b, c = verts[i], verts[(i + 1) % n], verts[(i + 2) % n]
        cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if cross <= tol:
            return False
    return True


def point_in_polygon(p, verts: np.ndarray, tol: float = 0.0) -> bool:
    """True if p is strictly inside the convex CCW polygon (by more than tol)."""
    px, py = float(p[0]), float(p[1])
    for i in range(len(verts)):
        ax, ay = verts[i]
        bx, by = verts[(i + 1) % len(verts)]
        if (bx - ax) * (py - ay) - (by - ay) * (px - ax) <= tol:
            return False
    return True


def segment_point_distance(a, b, p) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    p = np.asarray(p, dtype=float)
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return float(np.hypot(*(p - a)))
    t = np.clip(float((p - a) @ ab) / denom, 0.0, 1.0)
    return float(np.hypot(*(p - (a + t * ab))))


def segments_intersect(p1, p2, q1, q2) -> bool:
    """Proper or touching intersection of segments p1p2 and q1q2."""

    def orient(a, b, c):
        val = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if abs(val) < 1e-12:
            return 0
        return 1 if val > 0 else -1

    def on_seg(a, b, c):
        return (
            min(a[0], b[0]) - 1e-12 <= c[0] <= max(a[0], b[0]) + 1e-12
            and min(a[1], b[1]) - 1e-12 <= c[1] <= max(a[1], b[1]) + 1e-12
        )

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and on_seg(p1, p2, q1):
        return True
    if o2 == 0 and on_seg(p1, p2, q2):
        return True
    if o3 == 0 and on_seg(q1, q2, p1):
        return True
    if o4 == 0 and on_seg(q1, q2, p2):
        return True
    return False


def segment_polygon_distance(a, b, verts: np.ndarray) -> float:
    """Distance from segment ab to a convex polygon; 0 if it touches or crosses."""
    n = len(verts)
    mid = 0.5 * (np.asarray(a, dtype=float) + np.asarray(b, dtype=float))
    if point_in_polygon(a, verts) or point_in_polygon(b, verts) or point_in_polygon(mid, verts):
        return 0.0
    best = math.inf
    for i in range(n):
        q1, q2 = verts[i], verts[(i + 1) % n]
        if segments_intersect(a, b, q1, q2):
            return 0.0
        best = min(best, segment_segment_distance(a, b, q1, q2))
    return best


def segment_segment_distance(p1, p2, q1, q2) -> float:
    if segments_intersect(p1, p2, q1, q2):
        return 0.0
    return min(
        segment_point_distance(p1, p2, q1),
        segment_point_distance(p1, p2, q2),
        segment_point_distance(q1, q2, p1),
        segment_point_distance(q1, q2, p2),
    )


def convex_polygons_intersect(pa: np.ndarray, pb: np.ndarray) -> bool:
    """Separating-axis test for two convex polygons."""
    for poly_pair in ((pa, pb), (pb, pa)):
        verts = poly_pair[0]
        for i in range(len(verts)):
            edge = verts[(i + 1) % len(verts)] - verts[i]
            axis = np.array([-edge[1], edge[0]])
            pr_a = pa @ axis
            pr_b = pb @ axis
            if pr_a.max() < pr_b.min() or pr_b.max() < pr_a.min():
                return False
    return True


# ---------------------------------------------------------------------------
# Environment


@dataclass
class Environment:
    """Workspace with convex polygonal obstacles and a goal state.

    bounds: (xmin, ymin, xmax, ymax). Obstacles are CCW vertex arrays in meters.
    """

    bounds: tuple
    goal: AgentState
    goal_tolerance: float
    obstacles: list = field(default_factory=list)

    def __post_init__(self):
        self.obstacles = [np.asarray(o, dtype=float) for o in self.obstacles]
        self.bounds = tuple(float(b) for b in self.bounds)

    @property
    def extent(self) -> float:
        xmin, ymin, xmax, ymax = self.bounds
        return max(xmax - xmin, ymax - ymin)

    def in_bounds(self, p) -> bool:
        xmin, ymin, xmax, ymax = self.bounds
        return xmin <= p[0] <= xmax and ymin <= p[1] <= ymax

    def point_in_obstacle(self, p, tol: float = 0.0) -> bool:
        return any(point_in_polygon(p, o, tol) for o in self.obstacles)

    def vertex_list(self) -> list:
        """All obstacle vertices as (obstacle_index, vertex_index, xy)."""
        out = []
        for oi, obs in enumerate(self.obstacles):
            for vi, v in enumerate(obs):
                out.append((oi, vi, np.array(v)))
        return out

    def digest(self) -> str:
        return hashlib.sha256(env_to_json(self).encode()).hexdigest()


def validate_environment(env: Environment) -> list:
    """Return a list of invariant violations; empty means the environment is valid."""
    report = []
    xmin, ymin, xmax, ymax = env.bounds
    if not (xmin < xmax and ymin < ymax):
        report.append("bounds rectangle is degenerate")
    if env.goal_tolerance <= 0:
        report.append("goal_tolerance must be positive")
    if not env.in_bounds((env.goal.x, env.goal.y)):
        report.append("goal outside bounds")
    for i, obs in enumerate(env.obstacles):
        if len(obs) < 3:
            report.append(f"obstacle {i} has fewer than 3 vertices")
            continue
        if not polygon_is_convex_ccw(obs):
            report.append(f"obstacle {i} is not strictly convex CCW")
        if not all(
            xmin < v[0] < xmax and ymin < v[1] < ymax for v in obs
        ):
            report.append(f"obstacle {i} not strictly inside bounds")
        if point_in_polygon((env.goal.x, env.goal.y), obs, tol=-1e-12):
            report.append(f"goal occluded by obstacle {i}")
    for i in range(len(env.obstacles)):
        for j in range(i + 1, len(env.obstacles)):
            if len(env.obstacles[i]) >= 3 and len(env.obstacles[j]) >= 3:
                if convex_polygons_intersect(env.obstacles[i], env.obstacles[j]):
                    report.append(f"obstacles {i} and {j} intersect")
    return report


def env_to_json(env: Environment) -> str:
    obj = {
        "bounds": list(env.bounds),
        "goal": env.goal.to_dict(),
        "goal_tolerance": env.goal_tolerance,
        "obstacles": [np.asarray(o).tolist() for o in env.obstacles],
    }
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def env_from_json(text: str) -> Environment:
    obj = json.loads(text)
    return Environment(
        bounds=tuple(obj["bounds"]),
        goal=AgentState.from_dict(obj["goal"]),
        goal_tolerance=float(obj["goal_tolerance"]),
        obstacles=[np.asarray(o, dtype=float) for o in obj["obstacles"]],
    )


def load_environment(path) -> Environment:
    return env_from_json(Path(path).read_text())


def save_environment(env: Environment, path) -> None:
    Path(path).write_text(env_to_json(env))


def env_relative(state: AgentState, env: Environment) -> EnvRelativeState:
    """Displacements agent->goal and agent->nearest obstacle vertex."""
    pos = state.position
    to_goal = env.goal.position - pos
    best = np.zeros(2)
    best_d = math.inf
    for _, _, v in env.vertex_list():
        d = float(np.hypot(*(v - pos)))
        if d < best_d:
            best_d = d
            best = v - pos
    return EnvRelativeState(to_goal=to_goal, to_nearest_vertex=best)


# ---------------------------------------------------------------------------
# Trajectories and datasets


@dataclass
class Trajectory:
    """Uniformly sampled closed-loop run.

    states: (N, 4) rows [x, y, v, psi]; controls: (N, 2) rows [omega, a].
    Row i's control is the one held over [t_i, t_i + dt); the final row's
    control is a zero placeholder.
    """

    dt: float
    states: np.ndarray
    controls: np.ndarray
    reached_goal: bool = True

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.controls = np.asarray(self.controls, dtype=float)
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if len(self.states) < 2:
            raise ValueError("trajectory needs at least 2 samples")
        if self.states.shape[0] != self.controls.shape[0]:
            raise ValueError("states and controls must align")

    def __len__(self) -> int:
        return len(self.states)

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.states)) * self.dt

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, :2]

    def state(self, i: int) -> AgentState:
        return AgentState.from_array(self.states[i])

    def duration(self) -> float:
        return (len(self.states) - 1) * self.dt

    def arc_length(self) -> float:
        return float(np.sum(np.hypot(*np.diff(self.positions, axis=0).T)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t", "x", "y", "v", "psi", "omega", "a"])
        for i in range(len(self.states)):
            t = i * self.dt
            row = [f"{t:.6f}"] + [f"{val:.9f}" for val in self.states[i]] + [
                f"{val:.9f}" for val in self.controls[i]
            ]
            writer.writerow(row)
        return buf.getvalue()

    @staticmethod
    def from_csv(text: str, reached_goal: bool = True) -> "Trajectory":
        rows = list(csv.reader(io.StringIO(text)))
        if rows[0] != ["t", "x", "y", "v", "psi", "omega", "a"]:
            raise ValueError(f"unexpected trajectory header: {rows[0]}")
        data = np.array([[float(c) for c in r] for r in rows[1:]])
        if len(data) < 2:
            raise ValueError("trajectory file needs at least 2 samples")
        dt = float(data[1, 0] - data[0, 0])
        return Trajectory(dt=dt, states=data[:, 1:5], controls=data[:, 5:7], reached_goal=reached_goal)


def kinematic_consistency(traj: Trajectory) -> float:
    """Max position defect of consecutive samples vs. midpoint unicycle advance.

    Meant as a sanity bound (RK4 vs. midpoint), not an exact residual.
    """
    s = traj.states
    dtv = traj.dt
    worst = 0.0
    for i in range(len(s) - 1):
        x, y, v, psi = s[i]
        x2, y2, v2, psi2 = s[i + 1]
        vm = 0.5 * (v + v2)
        pm = psi + 0.5 * wrap_angle(psi2 - psi)
        px = x + dtv * vm * math.cos(pm)
        py = y + dtv * vm * math.sin(pm)
        worst = max(worst, math.hypot(px - x2, py - y2))
    return worst


@dataclass
class Dataset:
    """A collection of goal-reaching trajectories in one environment."""

    env: Environment
    trajectories: list
    provenance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.trajectories)
