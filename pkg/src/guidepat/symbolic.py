"""Trajectory quantization into symbol strings and pairwise subgoal
identification via exact common-suffix comparison.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import TAU, AgentState, Dataset, Trajectory, wrap_angle


class IncompatibleGoalsError(ValueError):
    pass


@dataclass(frozen=True)
class Quantizer:
    """Half-open rectangular cells over (x, y, v, psi).

    A value q lands in cell k when k*d + origin <= q < (k+1)*d + origin;
    boundaries go to the upper cell. Headings are quantized on the wrapped
    circle, so dpsi must divide 2*pi evenly.
    """

    dx: float
    dy: float
    dv: float
    dpsi: float
    ox: float = 0.0
    oy: float = 0.0
    ov: float = 0.0
    opsi: float = 0.0

    def __post_init__(self):
        for name in ("dx", "dy", "dv", "dpsi"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        ratio = TAU / self.dpsi
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("dpsi must divide 2*pi evenly")

    @property
    def n_psi(self) -> int:
        return int(round(TAU / self.dpsi))

    def cell_of(self, state) -> tuple:
        x, y, v, psi = (float(c) for c in state)
        ix = math.floor((x - self.ox) / self.dx)
        iy = math.floor((y - self.oy) / self.dy)
        iv = math.floor((v - self.ov) / self.dv)
        ip = math.floor((wrap_angle(psi) - self.opsi) / self.dpsi) % self.n_psi
        return (ix, iy, iv, ip)

    def cell_center(self, cell: tuple) -> np.ndarray:
        ix, iy, iv, ip = cell
        return np.array(
            [
                (ix + 0.5) * self.dx + self.ox,
                (iy + 0.5) * self.dy + self.oy,
                (iv + 0.5) * self.dv + self.ov,
                wrap_angle((ip + 0.5) * self.dpsi + self.opsi),
            ]
        )

    def to_dict(self) -> dict:
        return {
            "dx": self.dx, "dy": self.dy, "dv": self.dv, "dpsi": self.dpsi,
            "ox": self.ox, "oy": self.oy, "ov": self.ov, "opsi": self.opsi,
        }

    @staticmethod
    def from_dict(d: dict) -> "Quantizer":
        return Quantizer(**{k: float(v) for k, v in d.items()})


def default_quantizer(env, v_cruise: float) -> Quantizer:
    """Cells at extent/40 in position, v_cruise/4 in speed, pi/8 in heading,
    with origins shifted so the goal state sits at a cell center.
    """
    d = env.extent / 40.0
    dv = v_cruise / 4.0
    dpsi = math.pi / 8.0
    g = env.goal
    return Quantizer(
        dx=d, dy=d, dv=dv, dpsi=dpsi,
        ox=(g.x - d / 2.0) % d,
        oy=(g.y - d / 2.0) % d,
        ov=(g.v - dv / 2.0) % dv,
        opsi=(g.psi - dpsi / 2.0) % dpsi,
    )


@dataclass
class SymbolicTrajectory:
    """Run-length-collapsed cell string with first-entry sample anchors."""

    symbols: list
    anchors: list

    def __len__(self) -> int:
        return len(self.symbols)


def quantize_trajectory(traj: Trajectory, q: Quantizer) -> SymbolicTrajectory:
    symbols = []
    anchors = []
    prev = None
    for i, row in enumerate(traj.states):
        cell = q.cell_of(row)
        if cell != prev:
            symbols.append(cell)
            anchors.append(i)
            prev = cell
    return SymbolicTrajectory(symbols=symbols, anchors=anchors)


def quantize_dataset(ds: Dataset, q: Quantizer) -> list:
    return [quantize_trajectory(t, q) for t in ds.trajectories]


@dataclass
class SubgoalObservation:
    """State where two trajectories' futures merge, plus its source pair."""

    cell: tuple
    state_a: AgentState
    state_b: AgentState
    rep_state: AgentState
    pair: tuple


def _circular_mean(a: float, b: float) -> float:
    return math.atan2(
        0.5 * (math.sin(a) + math.sin(b)), 0.5 * (math.cos(a) + math.cos(b))
    )


def _common_suffix_length(sa: list, sb: list) -> int:
    n = 0
    while n < len(sa) and n < len(sb) and sa[-1 - n] == sb[-1 - n]:
        n += 1
    return n


def pairwise_subgoal(
    sa: SymbolicTrajectory,
    sb: SymbolicTrajectory,
    traj_a: Trajectory,
    traj_b: Trajectory,
    l_min: int,
    pair=(0, 1),
):
    """Earliest-starting common suffix of the two collapsed strings, if it
    has at least l_min symbols; its first symbol is the subgoal.

    Both trajectories must terminate in the same position cell (arrival
    heading and residual speed may differ between approach directions, so
    the goal-cell identity is positional). Returns None when no
    sufficiently long suffix exists.
    """
    if sa.symbols[-1][:2] != sb.symbols[-1][:2]:
        raise IncompatibleGoalsError(
            f"trajectories end in different cells: {sa.symbols[-1]} vs {sb.symbols[-1]}"
        )
    n = _common_suffix_length(sa.symbols, sb.symbols)
    if n < l_min:
        return None
    ia = len(sa.symbols) - n
    ib = len(sb.symbols) - n
    cell = sa.symbols[ia]
    state_a = traj_a.state(sa.anchors[ia])
    state_b = traj_b.state(sb.anchors[ib])
    rep = AgentState(
        0.5 * (state_a.x + state_b.x),
        0.5 * (state_a.y + state_b.y),
        0.5 * (state_a.v + state_b.v),
        _circular_mean(state_a.psi, state_b.psi),
    )
    return SubgoalObservation(cell=cell, state_a=state_a, state_b=state_b, rep_state=rep, pair=pair)


def extract_observed_subgoals(
    sds: list,
    ds: Dataset,
    l_min: int,
    exclude_goal_cell: bool = True,
) -> list:
    """All pairwise subgoals over the dataset (one observation per unordered
    pair that has one). Pairs whose subgoal is the goal cell itself are
    skipped unless exclude_goal_cell is False.
    """
    n = len(sds)
    out = []
    goal_cells = {s.symbols[-1][:2] for s in sds}
    if len(goal_cells) > 1:
        raise IncompatibleGoalsError(
            f"dataset trajectories end in {len(goal_cells)} distinct position cells"
        )
    goal_cell = next(iter(goal_cells)) if goal_cells else None
    for i in range(n):
        for j in range(i + 1, n):
            obs = pairwise_subgoal(sds[i], sds[j], ds.trajectories[i], ds.trajectories[j], l_min, pair=(i, j))
            if obs is None:
                continue
            if exclude_goal_cell and obs.cell[:2] == goal_cell:
                continue
            out.append(obs)
    return out
