"""Symmetry-group congruence of behavior segments and the pattern library.

A PlanarIsometry is a rotation + translation with an optional mirror about
the x-axis applied first; acting on a state it maps position, flips and
rotates the heading, and leaves speed unchanged.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import AgentState, Environment, wrap_angle


class DegenerateSegmentError(ValueError):
    pass


@dataclass(frozen=True)
class PlanarIsometry:
    """Group element m(psi, t) with optional reflection (mirror before rotation)."""

    psi: float = 0.0
    tx: float = 0.0
    ty: float = 0.0
    reflect: bool = False

    def __post_init__(self):
        object.__setattr__(self, "psi", wrap_angle(self.psi))

    @staticmethod
    def identity() -> "PlanarIsometry":
        return PlanarIsometry(0.0, 0.0, 0.0, False)

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.tx, self.ty])

    def rotation_matrix(self) -> np.ndarray:
        c, s = math.cos(self.psi), math.sin(self.psi)
        rot = np.array([[c, -s], [s, c]])
        if self.reflect:
            rot = rot @ np.array([[1.0, 0.0], [0.0, -1.0]])
        return rot

    def apply_points(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return pts @ self.rotation_matrix().T + self.translation

    def apply_heading(self, psi_state: float) -> float:
        inner = -psi_state if self.reflect else psi_state
        return wrap_angle(inner + self.psi)

    def apply_state(self, s: AgentState) -> AgentState:
        p = self.apply_points(s.position[None, :])[0]
        return AgentState(float(p[0]), float(p[1]), s.v, self.apply_heading(s.psi))

    def apply_state_array(self, states: np.ndarray) -> np.ndarray:
        """Rows [x, y, v, psi]; speed passes through untouched."""
        states = np.asarray(states, dtype=float)
        out = states.copy()
        out[:, :2] = self.apply_points(states[:, :2])
        sign = -1.0 if self.reflect else 1.0
        out[:, 3] = np.array([wrap_angle(sign * p + self.psi) for p in states[:, 3]])
        return out

    def compose(self, other: "PlanarIsometry") -> "PlanarIsometry":
        """self after other: (self o other)(p) = self(other(p))."""
        reflect = self.reflect != other.reflect
        inner_psi = -other.psi if self.reflect else other.psi
        psi = wrap_angle(self.psi + inner_psi)
        t = self.apply_points(other.translation[None, :])[0]
        return PlanarIsometry(psi, float(t[0]), float(t[1]), reflect)

    def inverse(self) -> "PlanarIsometry":
        psi_inv = self.psi if self.reflect else -self.psi
        inv = PlanarIsometry(psi_inv, 0.0, 0.0, self.reflect)
        t = inv.apply_points(self.translation[None, :])[0]
        return PlanarIsometry(psi_inv, float(-t[0]), float(-t[1]), self.reflect)

    def to_dict(self) -> dict:
        return {"psi": self.psi, "tx": self.tx, "ty": self.ty, "reflect": self.reflect}

    @staticmethod
    def from_dict(d: dict) -> "PlanarIsometry":
        return PlanarIsometry(float(d["psi"]), float(d["tx"]), float(d["ty"]), bool(d["reflect"]))


def group_act(m: PlanarIsometry, s: AgentState) -> AgentState:
    return m.apply_state(s)


def transform_environment(m: PlanarIsometry, env: Environment) -> Environment:
    """Image environment: polygons re-wound CCW under reflection, bounds
    replaced by the axis-aligned box of the transformed corners.
    """
    obstacles = []
    for obs in env.obstacles:
        pts = m.apply_points(obs)
        if m.reflect:
            pts = pts[::-1]
        obstacles.append(pts)
    xmin, ymin, xmax, ymax = env.bounds
    corners = np.array([[xmin, ymin], [xmax, ymin], [xmax, ymax], [xmin, ymax]])
    tc = m.apply_points(corners)
    new_bounds = (tc[:, 0].min(), tc[:, 1].min(), tc[:, 0].max(), tc[:, 1].max())
    return Environment(
        bounds=new_bounds,
        goal=m.apply_state(env.goal),
        goal_tolerance=env.goal_tolerance,
        obstacles=obstacles,
    )


# ---------------------------------------------------------------------------
# Segment matching


def resample_by_arclength(states: np.ndarray, n: int, heading_col: int = 3) -> np.ndarray:
    """Resample rows at n points equally spaced in normalized arc length.

    Columns 0-1 must be positions; heading_col (if present) is interpolated
    on the unwrapped circle, everything else linearly.
    """
    states = np.asarray(states, dtype=float)
    if len(states) < 2:
        raise DegenerateSegmentError("segment needs at least 2 samples")
    steps = np.hypot(*np.diff(states[:, :2], axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(steps)])
    total = s[-1]
    if total <= 1e-12:
        raise DegenerateSegmentError("segment has zero arc length")
    grid = np.linspace(0.0, total, n)
    out = np.empty((n, states.shape[1]))
    for col in range(states.shape[1]):
        if col == heading_col and states.shape[1] > heading_col:
            unwrapped = np.unwrap(states[:, col])
            vals = np.interp(grid, s, unwrapped)
            out[:, col] = [wrap_angle(v) for v in vals]
        else:
            out[:, col] = np.interp(grid, s, states[:, col])
    return out


@dataclass
class MatchResult:
    m: PlanarIsometry
    rms_residual: float
    relative_difference: np.ndarray
    heading_rms: float = 0.0
    speed_rms: float = 0.0
    control_rms: float = None


def _procrustes_rotation(a_pts: np.ndarray, b_pts: np.ndarray) -> tuple:
    """Closed-form rotation + translation minimizing sum ||R a + t - b||^2."""
    ca = a_pts.mean(axis=0)
    cb = b_pts.mean(axis=0)
    a0 = a_pts - ca
    b0 = b_pts - cb
    num = float(np.sum(a0[:, 0] * b0[:, 1] - a0[:, 1] * b0[:, 0]))
    den = float(np.sum(a0[:, 0] * b0[:, 0] + a0[:, 1] * b0[:, 1]))
    psi = math.atan2(num, den)
    c, s = math.cos(psi), math.sin(psi)
    rot = np.array([[c, -s], [s, c]])
    t = cb - rot @ ca
    resid = a0 @ rot.T + cb - b_pts
    rms = math.sqrt(float(np.mean(np.sum(resid**2, axis=1))))
    return psi, t, rms


def match_segments(
    a_states: np.ndarray,
    b_states: np.ndarray,
    n_corr: int = 50,
    allow_reflect: bool = False,
    a_controls: np.ndarray = None,
    b_controls: np.ndarray = None,
) -> MatchResult:
    """Best group element mapping segment a onto segment b.

    Both segments are resampled to n_corr correspondence points by
    normalized arc length; the position-only objective has a closed-form
    optimum. Heading/speed (and control, when sampled controls are given)
    residuals are reported as diagnostics only.
    """
    ra = resample_by_arclength(a_states, n_corr)
    rb = resample_by_arclength(b_states, n_corr)

    candidates = [False, True] if allow_reflect else [False]
    best = None
    for reflect in candidates:
        a_pts = ra[:, :2].copy()
        if reflect:
            a_pts[:, 1] = -a_pts[:, 1]
        psi, t, rms = _procrustes_rotation(a_pts, rb[:, :2])
        if best is None or rms < best[3] - 1e-15:
            best = (reflect, psi, t, rms)
    reflect, psi, t, rms = best
    m = PlanarIsometry(psi, float(t[0]), float(t[1]), reflect)

    mapped = m.apply_state_array(ra)
    residual = np.hypot(*(mapped[:, :2] - rb[:, :2]).T)
    arc = float(
        np.sum(np.hypot(*np.diff(rb[:, :2], axis=0).T))
    )
    profile = residual / max(arc, 1e-12)
    heading_rms = math.sqrt(
        float(np.mean([wrap_angle(d) ** 2 for d in (mapped[:, 3] - rb[:, 3])]))
    )
    speed_rms = math.sqrt(float(np.mean((mapped[:, 2] - rb[:, 2]) ** 2)))

    control_rms = None
    if a_controls is not None and b_controls is not None:
        ca = resample_by_arclength(
            np.column_stack([a_states[:, :2], a_controls]), n_corr, heading_col=None
        )[:, 2:]
        cb = resample_by_arclength(
            np.column_stack([b_states[:, :2], b_controls]), n_corr, heading_col=None
        )[:, 2:]
        if reflect:
            ca[:, 0] = -ca[:, 0]  # mirror flips the turn-rate sign
        control_rms = math.sqrt(float(np.mean(np.sum((ca - cb) ** 2, axis=1))))

    return MatchResult(
        m=m,
        rms_residual=rms,
        relative_difference=profile,
        heading_rms=heading_rms,
        speed_rms=speed_rms,
        control_rms=control_rms,
    )


# ---------------------------------------------------------------------------
# Pattern library


@dataclass
class InteractionPattern:
    member_clusters: list
    representative_cluster: int
    representative_index: int
    alignments: dict = field(default_factory=dict)  # cluster id -> PlanarIsometry onto the representative


def _pairwise_rms(segments: list, n_corr: int) -> np.ndarray:
    n = len(segments)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            r = match_segments(segments[i], segments[j], n_corr=n_corr).rms_residual
            out[i, j] = out[j, i] = r
    return out


def cluster_medoid(segments: list, n_corr: int = 50) -> int:
    """Index of the member minimizing summed rms to the others.

    Near-ties (within 2% of the median member arc length) break toward the
    shorter member. Arc length is invariant under isometries, so mirror-image
    clusters resolve their medoids to mirror twins even when two members tie
    structurally; a raw argmin would let sampling jitter pick different rows
    on the two sides.
    """
    if len(segments) == 1:
        return 0
    sums = _pairwise_rms(segments, n_corr).sum(axis=1)
    arcs = np.array(
        [float(np.sum(np.hypot(*np.diff(np.asarray(s)[:, :2], axis=0).T))) for s in segments]
    )
    tol = 0.02 * float(np.median(arcs))
    best = float(sums.min())
    candidates = [i for i in range(len(segments)) if sums[i] <= best + tol]
    candidates.sort(key=lambda i: (arcs[i], i))
    return int(candidates[0])


def _members_map_within(
    src: list, dst: list, m: PlanarIsometry, eps: float, n_corr: int
) -> bool:
    """Every member of src maps under the single m within eps of some dst member."""
    dst_rs = [resample_by_arclength(s, n_corr)[:, :2] for s in dst]
    for seg in src:
        pts = m.apply_points(resample_by_arclength(seg, n_corr)[:, :2])
        best = min(
            math.sqrt(float(np.mean(np.sum((pts - d) ** 2, axis=1)))) for d in dst_rs
        )
        if best > eps:
            return False
    return True


def default_eps_match(clusters: dict, frac: float = 0.05) -> float:
    """frac of the median member arc length across all clusters."""
    arcs = []
    for segs in clusters.values():
        for s in segs:
            arcs.append(float(np.sum(np.hypot(*np.diff(np.asarray(s)[:, :2], axis=0).T))))
    return frac * float(np.median(arcs))


def build_pattern_library(
    clusters: dict,
    eps_match: float,
    allow_reflect: bool = False,
    n_corr: int = 50,
) -> list:
    """Group segment clusters into interaction patterns.

    clusters: {cluster id: [segment state arrays]}. Two clusters are
    congruent when the element matching their medoids carries every member
    of one within eps_match of some member of the other, both ways.
    Patterns are the connected components, ordered by smallest member id.
    """
    ids = sorted(clusters.keys())
    for cid in ids:
        if not clusters[cid]:
            raise ValueError(f"cluster {cid} is empty")
    medoids = {cid: cluster_medoid(clusters[cid], n_corr) for cid in ids}

    edges = {cid: set() for cid in ids}
    for i, ca in enumerate(ids):
        for cb in ids[i + 1 :]:
            med_a = clusters[ca][medoids[ca]]
            med_b = clusters[cb][medoids[cb]]
            res = match_segments(med_a, med_b, n_corr=n_corr, allow_reflect=allow_reflect)
            if res.rms_residual > eps_match:
                continue
            fwd = _members_map_within(clusters[ca], clusters[cb], res.m, eps_match, n_corr)
            bwd = _members_map_within(
                clusters[cb], clusters[ca], res.m.inverse(), eps_match, n_corr
            )
            if fwd and bwd:
                edges[ca].add(cb)
                edges[cb].add(ca)

    seen = set()
    patterns = []
    for cid in ids:
        if cid in seen:
            continue
        comp = []
        stack = [cid]
        while stack:
            node = stack.pop()
            if node in seen:
                continue
            seen.add(node)
            comp.append(node)
            stack.extend(sorted(edges[node] - seen))
        comp.sort()
        rep_cluster = comp[0]
        rep_idx = medoids[rep_cluster]
        rep_seg = clusters[rep_cluster][rep_idx]
        alignments = {}
        for member in comp:
            if member == rep_cluster:
                alignments[member] = PlanarIsometry.identity()
            else:
                res = match_segments(
                    clusters[member][medoids[member]],
                    rep_seg,
                    n_corr=n_corr,
                    allow_reflect=allow_reflect,
                )
                alignments[member] = res.m
        patterns.append(
            InteractionPattern(
                member_clusters=comp,
                representative_cluster=rep_cluster,
                representative_index=rep_idx,
                alignments=alignments,
            )
        )
    return patterns
