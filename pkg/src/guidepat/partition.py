"""Time-to-go learning, wavefront propagation over a free-space grid, and the
predicted partition: vertex subgoals, attracting directions, and repelling
boundaries where wavefronts meet.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import Dataset, Environment, point_in_polygon, segment_polygon_distance, wrap_angle
from .sim import vertex_pass_points


class DegenerateFeaturesError(RuntimeError):
    pass


class NoFreeSourceError(ValueError):
    pass


# 16-connected stencil: rook, diagonal, and knight moves
MOVES = [
    (1, 0), (-1, 0), (0, 1), (0, -1),
    (1, 1), (1, -1), (-1, 1), (-1, -1),
    (2, 1), (2, -1), (-2, 1), (-2, -1),
    (1, 2), (1, -2), (-1, 2), (-1, -2),
]


@dataclass
class Grid:
    origin: np.ndarray  # cell (0,0) center
    spacing: float
    nx: int
    ny: int
    free: np.ndarray  # (nx, ny) bool

    def cell_of(self, p) -> tuple:
        i = int(round((p[0] - self.origin[0]) / self.spacing))
        j = int(round((p[1] - self.origin[1]) / self.spacing))
        return (i, j)

    def center(self, cell) -> np.ndarray:
        return self.origin + self.spacing * np.array([cell[0], cell[1]], dtype=float)

    def in_grid(self, cell) -> bool:
        return 0 <= cell[0] < self.nx and 0 <= cell[1] < self.ny

    def is_free(self, cell) -> bool:
        return self.in_grid(cell) and bool(self.free[cell[0], cell[1]])


def build_grid(env: Environment, spacing: float, inflate: float = 0.0) -> Grid:
    """Free-cell mask over the workspace; cells within `inflate` of an
    obstacle count as blocked (vehicle clearance model).
    """
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    xmin, ymin, xmax, ymax = env.bounds
    # anchor the lattice so the goal sits exactly on a cell center; in
    # goal-symmetric worlds this keeps the grid mirror-symmetric too
    gx, gy = env.goal.x, env.goal.y
    ox = gx - spacing * math.floor((gx - xmin) / spacing)
    oy = gy - spacing * math.floor((gy - ymin) / spacing)
    nx = int(math.floor((xmax - ox) / spacing)) + 1
    ny = int(math.floor((ymax - oy) / spacing)) + 1
    origin = np.array([ox, oy])
    free = np.ones((nx, ny), dtype=bool)
    xs = ox + spacing * np.arange(nx)
    ys = oy + spacing * np.arange(ny)
    for obs in env.obstacles:
        ox_min, oy_min = obs.min(axis=0) - inflate - spacing
        ox_max, oy_max = obs.max(axis=0) + inflate + spacing
        i_lo = max(0, int((ox_min - origin[0]) / spacing))
        i_hi = min(nx - 1, int(math.ceil((ox_max - origin[0]) / spacing)))
        j_lo = max(0, int((oy_min - origin[1]) / spacing))
        j_hi = min(ny - 1, int(math.ceil((oy_max - origin[1]) / spacing)))
        for i in range(i_lo, i_hi + 1):
            for j in range(j_lo, j_hi + 1):
                if not free[i, j]:
                    continue
                p = (xs[i], ys[j])
                if point_in_polygon(p, obs):
                    free[i, j] = False
                elif inflate > 0 and segment_polygon_distance(p, p, obs) < inflate:
                    free[i, j] = False
    return Grid(origin=origin, spacing=spacing, nx=nx, ny=ny, free=free)


@dataclass
class TimeToGoModel:
    """Remaining-time regression: t_go ~ theta0 + theta1 * d_geo + theta2 * (1 - cos dpsi)."""

    theta0: float
    theta1: float
    theta2: float
    residual_rms: float


@dataclass
class ArrivalField:
    grid: Grid
    arrival: np.ndarray  # (nx, ny), inf where unreached
    parent: np.ndarray  # (nx, ny, 2), -1 where none
    source_label: np.ndarray  # (nx, ny), index of the claiming source, -1 unreached
    route_label: np.ndarray = None  # filled by the partition derivation

    def reached(self, cell) -> bool:
        return math.isfinite(self.arrival[cell[0], cell[1]])


def propagate_wavefront(
    env: Environment,
    sources: list,
    ttg: TimeToGoModel,
    spacing: float,
    inflate: float = 0.0,
    grid: Grid = None,
) -> ArrivalField:
    """Multi-source Dijkstra on the 16-connected free-cell graph.

    sources: [(xy position, start time)]. Edge cost is theta1 times the
    Euclidean step. Deterministic: heap ties resolve by push order.
    """
    grid = grid or build_grid(env, spacing, inflate)
    arrival = np.full((grid.nx, grid.ny), math.inf)
    parent = np.full((grid.nx, grid.ny, 2), -1, dtype=int)
    source_label = np.full((grid.nx, grid.ny), -1, dtype=int)

    heap = []
    counter = 0
    any_free = False
    for si, (pos, t0) in enumerate(sources):
        cell = grid.cell_of(pos)
        if not grid.is_free(cell):
            continue
        any_free = True
        if t0 < arrival[cell]:
            arrival[cell] = t0
            source_label[cell] = si
            heapq.heappush(heap, (t0, counter, cell))
            counter += 1
    if not any_free:
        raise NoFreeSourceError("no source lies on a free cell")

    step_cost = ttg.theta1 * spacing
    while heap:
        t, _, cell = heapq.heappop(heap)
        if t > arrival[cell] + 1e-12:
            continue
        ci, cj = cell
        for di, dj in MOVES:
            nb = (ci + di, cj + dj)
            if not grid.is_free(nb):
                continue
            if abs(di) + abs(dj) == 3:  # knight move must not cut a blocked corner
                if not (grid.is_free((ci + di // 2 if abs(di) == 2 else ci, cj + dj // 2 if abs(dj) == 2 else cj))
                        and grid.is_free((ci + (1 if di > 0 else -1), cj + (1 if dj > 0 else -1)))):
                    continue
            elif abs(di) == 1 and abs(dj) == 1:
                if not (grid.is_free((ci + di, cj)) or grid.is_free((ci, cj + dj))):
                    continue
            nt = t + step_cost * math.hypot(di, dj)
            if nt < arrival[nb] - 1e-12:
                arrival[nb] = nt
                parent[nb[0], nb[1]] = cell
                source_label[nb] = source_label[cell]
                heapq.heappush(heap, (nt, counter, nb))
                counter += 1
    return ArrivalField(grid=grid, arrival=arrival, parent=parent, source_label=source_label)


# ---------------------------------------------------------------------------
# Time-to-go fitting


def geodesic_distance_field(env: Environment, spacing: float) -> ArrivalField:
    unit = TimeToGoModel(theta0=0.0, theta1=1.0, theta2=0.0, residual_rms=0.0)
    return propagate_wavefront(env, [(env.goal.position, 0.0)], unit, spacing)


def _downhill_direction(field: ArrivalField, cell) -> np.ndarray:
    p = field.parent[cell[0], cell[1]]
    if p[0] < 0:
        return np.zeros(2)
    vec = field.grid.center((p[0], p[1])) - field.grid.center(cell)
    n = np.hypot(*vec)
    return vec / n if n > 0 else np.zeros(2)


def fit_ttg(ds: Dataset, spacing: float = None) -> TimeToGoModel:
    """Ordinary least squares of remaining time on (1, geodesic distance,
    1 - cos heading misalignment) over every trajectory sample.
    """
    if len(ds.trajectories) < 10:
        raise ValueError(f"need at least 10 trajectories, got {len(ds.trajectories)}")
    spacing = spacing or ds.env.extent / 200.0
    field = geodesic_distance_field(ds.env, spacing)

    rows = []
    target = []
    for traj in ds.trajectories:
        n = len(traj.states)
        for i in range(n):
            x, y, v, psi = traj.states[i]
            cell = field.grid.cell_of((x, y))
            if not field.reached(cell):
                continue
            d_geo = field.arrival[cell]
            direction = _downhill_direction(field, cell)
            if np.hypot(*direction) > 0:
                mis = 1.0 - math.cos(psi - math.atan2(direction[1], direction[0]))
            else:
                mis = 0.0
            rows.append([1.0, d_geo, mis])
            target.append((n - 1 - i) * traj.dt)
    phi = np.array(rows)
    t_go = np.array(target)
    gram = phi.T @ phi
    if np.linalg.matrix_rank(gram) < 3:
        raise DegenerateFeaturesError("TTG normal equations are singular")
    theta = np.linalg.solve(gram, phi.T @ t_go)
    resid = phi @ theta - t_go
    return TimeToGoModel(
        theta0=float(theta[0]),
        theta1=float(theta[1]),
        theta2=float(theta[2]),
        residual_rms=float(np.sqrt(np.mean(resid**2))),
    )


# ---------------------------------------------------------------------------
# Partition derivation


@dataclass
class SubgoalSite:
    id: int
    vertex: tuple  # (obstacle index, vertex index)
    position: np.ndarray  # inflated passing point
    direction: np.ndarray  # attracting direction (downhill along the wavefront)
    chain_count: int


@dataclass
class PartitionPrediction:
    field: ArrivalField
    subgoals: list
    repelling: list  # list of (n, 2) polylines
    attracting: list  # list of (2, 2) segments at subgoals
    labels: np.ndarray  # (nx, ny): subgoal id, 0 for direct-to-goal, -1 blocked

    def label_of(self, p) -> int:
        cell = self.field.grid.cell_of(p)
        if not self.field.grid.in_grid(cell):
            return -1
        return int(self.labels[cell[0], cell[1]])


def derive_subgoals_manifolds(
    env: Environment,
    ttg: TimeToGoModel,
    spacing: float,
    inflate: float = 0.0,
    n_min: int = 5,
    ring_cells: int = 2,
) -> PartitionPrediction:
    """Propagate the goal wavefront and read off the partition.

    An obstacle vertex becomes a subgoal when at least n_min free cells'
    parent chains pass within ring_cells of its inflated passing point.
    Each free cell's label is the first subgoal ring on its goal geodesic
    (0 when the chain runs straight to the goal); repelling polylines are
    the boundaries between differently labeled regions, obstacle edges
    excluded. Attracting directions sample the arrival gradient one cell
    outside the ring.
    """
    field = propagate_wavefront(env, [(env.goal.position, 0.0)], ttg, spacing, inflate)
    grid = field.grid

    verts = vertex_pass_points(env, inflate) if env.obstacles else []

    def build_rings(indices):
        ring_of = {}
        for vi in indices:
            c0 = grid.cell_of(verts[vi][2])
            for di in range(-ring_cells, ring_cells + 1):
                for dj in range(-ring_cells, ring_cells + 1):
                    cell = (c0[0] + di, c0[1] + dj)
                    if grid.is_free(cell):
                        ring_of.setdefault(cell, vi)
        return ring_of

    order = [
        (field.arrival[i, j], (i, j))
        for i in range(grid.nx)
        for j in range(grid.ny)
        if math.isfinite(field.arrival[i, j])
    ]
    order.sort()

    def first_ring_pass(ring_of):
        """First ring on each cell's goal chain (the cell's own ring counts),
        and per-vertex counts of chains that reach the ring from outside it.
        """
        first = {}
        counts = {}
        for _, cell in order:
            ring = ring_of.get(cell)
            in_ring = ring is not None
            if ring is None:
                p = field.parent[cell[0], cell[1]]
                ring = first.get((p[0], p[1]), -1) if p[0] >= 0 else -1
            first[cell] = ring
            if ring >= 0 and not in_ring:
                counts[ring] = counts.get(ring, 0) + 1
        return first, counts

    _, counts = first_ring_pass(build_rings(range(len(verts))))

    site_ids = {}
    subgoals = []
    for vi, (oi, vj, pos) in enumerate(verts):
        if counts.get(vi, 0) < n_min:
            continue
        c0 = grid.cell_of(pos)
        best = None
        for di in range(-ring_cells - 1, ring_cells + 2):
            for dj in range(-ring_cells - 1, ring_cells + 2):
                cell = (c0[0] + di, c0[1] + dj)
                if grid.is_free(cell) and field.reached(cell):
                    key = (abs(di) + abs(dj), field.arrival[cell])
                    if best is None or key < best[0]:
                        best = (key, cell)
        direction = _downhill_direction(field, best[1]) if best else np.zeros(2)
        sid = len(subgoals) + 1
        site_ids[vi] = sid
        subgoals.append(
            SubgoalSite(
                id=sid,
                vertex=(oi, vj),
                position=pos,
                direction=direction,
                chain_count=counts.get(vi, 0),
            )
        )

    # route labels consider detected sites only: chains through an
    # undetected vertex's neighborhood keep the label of their actual funnel
    first_site_ring, _ = first_ring_pass(build_rings(sorted(site_ids)))
    labels = np.full((grid.nx, grid.ny), -1, dtype=int)
    for _, cell in order:
        ring = first_site_ring[cell]
        labels[cell[0], cell[1]] = site_ids.get(ring, 0) if ring >= 0 else 0

    repelling = _label_boundaries(grid, labels)
    attracting = []
    for s in subgoals:
        if np.hypot(*s.direction) > 0:
            length = 4 * spacing
            attracting.append(np.array([s.position, s.position + length * s.direction]))
    field.route_label = labels
    return PartitionPrediction(
        field=field,
        subgoals=subgoals,
        repelling=repelling,
        attracting=attracting,
        labels=labels,
    )


def _label_boundaries(grid: Grid, labels: np.ndarray) -> list:
    """Chain boundary edges between differently labeled free cells into
    polylines of edge midpoints. Edges facing blocked cells are not
    boundaries (those are obstacle outlines, not repelling manifolds).
    """
    points = {}
    segs = []
    for i in range(grid.nx):
        for j in range(grid.ny):
            a = labels[i, j]
            if a < 0:
                continue
            for di, dj in ((1, 0), (0, 1)):
                ni, nj = i + di, j + dj
                if not (0 <= ni < grid.nx and 0 <= nj < grid.ny):
                    continue
                b = labels[ni, nj]
                if b < 0 or a == b:
                    continue
                # midpoint of the shared edge, as a lattice key
                mid = (2 * i + di, 2 * j + dj)
                segs.append(mid)
    if not segs:
        return []
    segs = sorted(set(segs))
    # connect midpoints within one lattice step (8-neighborhood on the
    # doubled lattice) into polylines
    remaining = set(segs)
    polylines = []
    while remaining:
        start = min(remaining)
        remaining.remove(start)
        chain = [start]
        grew = True
        while grew:
            grew = False
            for endpoint, append in ((chain[-1], True), (chain[0], False)):
                nbrs = [
                    p
                    for p in remaining
                    if max(abs(p[0] - endpoint[0]), abs(p[1] - endpoint[1])) <= 2
                ]
                if nbrs:
                    nbrs.sort(key=lambda p: (abs(p[0] - endpoint[0]) + abs(p[1] - endpoint[1]), p))
                    nxt = nbrs[0]
                    remaining.remove(nxt)
                    if append:
                        chain.append(nxt)
                    else:
                        chain.insert(0, nxt)
                    grew = True
        pts = np.array(
            [grid.origin + grid.spacing * np.array([k[0] / 2.0, k[1] / 2.0]) for k in chain]
        )
        polylines.append(pts)
    return polylines


def predict_partition_agreement(pred: PartitionPrediction, ds: Dataset, first_memberships: list):
    """Fraction of trajectories whose start-cell predicted label matches the
    empirical first-segment membership, after optimal label alignment.

    Returns (fraction, mapping dict predicted label -> empirical membership).
    """
    predicted = []
    for traj in ds.trajectories:
        predicted.append(pred.label_of(traj.states[0, :2]))
    predicted = np.array(predicted)
    empirical = np.array(first_memberships)
    if len(predicted) != len(empirical):
        raise ValueError("memberships must align with trajectories")

    p_vals = sorted(set(predicted.tolist()))
    e_vals = sorted(set(empirical.tolist()))
    counts = np.zeros((len(p_vals), len(e_vals)))
    for p, e in zip(predicted, empirical):
        counts[p_vals.index(p), e_vals.index(e)] += 1
    rows, cols = linear_sum_assignment(-counts)
    mapping = {p_vals[r]: e_vals[c] for r, c in zip(rows, cols)}
    matched = sum(counts[r, c] for r, c in zip(rows, cols))
    return float(matched / len(predicted)), mapping
