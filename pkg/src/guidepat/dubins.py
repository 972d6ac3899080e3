"""Shortest bounded-curvature paths between planar poses.

Standard six-word construction (LSL, RSR, LSR, RSL, RLR, LRL) in the
rho-normalized frame; ties broken by that fixed kind order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import TAU, wrap_angle

KIND_ORDER = ("LSL", "RSR", "LSR", "RSL", "RLR", "LRL")


def _mod2pi(theta: float) -> float:
    return theta - TAU * math.floor(theta / TAU)


@dataclass(frozen=True)
class DubinsPath:
    """One candidate word. segment_params are arc/line lengths in meters."""

    kind: str
    segment_params: tuple
    rho: float
    start: tuple
    end: tuple

    @property
    def length(self) -> float:
        return float(sum(self.segment_params))

    def sample(self, step: float = 0.05) -> np.ndarray:
        """Poses (x, y, psi) along the path, endpoints included."""
        n = max(2, int(math.ceil(self.length / step)) + 1)
        svals = np.linspace(0.0, self.length, n)
        return np.array([self.point_at(s) for s in svals])

    def point_at(self, s: float) -> tuple:
        x, y, psi = self.start
        remaining = s
        for seg_len, action in zip(self.segment_params, self.kind):
            d = min(remaining, seg_len)
            x, y, psi = _advance(x, y, psi, d, action, self.rho)
            remaining -= d
            if remaining <= 1e-15:
                break
        return (x, y, psi)


def _advance(x: float, y: float, psi: float, s: float, action: str, rho: float) -> tuple:
    if s == 0.0:
        return (x, y, psi)
    if action == "S":
        return (x + s * math.cos(psi), y + s * math.sin(psi), psi)
    sign = 1.0 if action == "L" else -1.0
    dpsi = sign * s / rho
    x2 = x + rho * sign * (math.sin(psi + dpsi) - math.sin(psi))
    y2 = y - rho * sign * (math.cos(psi + dpsi) - math.cos(psi))
    return (x2, y2, psi + dpsi)


def _lsl(a, b, d):
    p_sq = 2 + d * d - 2 * math.cos(a - b) + 2 * d * (math.sin(a) - math.sin(b))
    if p_sq < 0:
        return None
    p = math.sqrt(max(p_sq, 0.0))
    tmp = math.atan2(math.cos(b) - math.cos(a), d + math.sin(a) - math.sin(b))
    return (_mod2pi(-a + tmp), p, _mod2pi(b - tmp))


def _rsr(a, b, d):
    p_sq = 2 + d * d - 2 * math.cos(a - b) + 2 * d * (math.sin(b) - math.sin(a))
    if p_sq < 0:
        return None
    p = math.sqrt(max(p_sq, 0.0))
    tmp = math.atan2(math.cos(a) - math.cos(b), d - math.sin(a) + math.sin(b))
    return (_mod2pi(a - tmp), p, _mod2pi(-b + tmp))


def _lsr(a, b, d):
    p_sq = -2 + d * d + 2 * math.cos(a - b) + 2 * d * (math.sin(a) + math.sin(b))
    if p_sq < 0:
        return None
    p = math.sqrt(max(p_sq, 0.0))
    rec = math.atan2(-math.cos(a) - math.cos(b), d + math.sin(a) + math.sin(b)) - math.atan2(-2.0, p)
    return (_mod2pi(-a + rec), p, _mod2pi(-_mod2pi(b) + rec))


def _rsl(a, b, d):
    p_sq = -2 + d * d + 2 * math.cos(a - b) - 2 * d * (math.sin(a) + math.sin(b))
    if p_sq < 0:
        return None
    p = math.sqrt(max(p_sq, 0.0))
    rec = math.atan2(math.cos(a) + math.cos(b), d - math.sin(a) - math.sin(b)) - math.atan2(2.0, p)
    return (_mod2pi(a - rec), p, _mod2pi(b - rec))


def _rlr(a, b, d):
    rec = (6.0 - d * d + 2.0 * math.cos(a - b) + 2.0 * d * (math.sin(a) - math.sin(b))) / 8.0
    if abs(rec) > 1.0:
        return None
    p = _mod2pi(TAU - math.acos(rec))
    t = _mod2pi(a - math.atan2(math.cos(a) - math.cos(b), d - math.sin(a) + math.sin(b)) + _mod2pi(p / 2.0))
    return (t, p, _mod2pi(a - b - t + _mod2pi(p)))


def _lrl(a, b, d):
    rec = (6.0 - d * d + 2.0 * math.cos(a - b) + 2.0 * d * (math.sin(b) - math.sin(a))) / 8.0
    if abs(rec) > 1.0:
        return None
    p = _mod2pi(TAU - math.acos(rec))
    t = _mod2pi(-a - math.atan2(math.cos(a) - math.cos(b), d + math.sin(a) - math.sin(b)) + p / 2.0)
    return (t, p, _mod2pi(_mod2pi(b) - a - t + _mod2pi(p)))


_SOLVERS = {"LSL": _lsl, "RSR": _rsr, "LSR": _lsr, "RSL": _rsl, "RLR": _rlr, "LRL": _lrl}


def dubins_shortest_path(start, end, rho: float) -> DubinsPath:
    """Minimum-length path of bounded curvature 1/rho from pose to pose.

    Poses are (x, y, psi) tuples. A feasible path always exists; ties among
    equal-length words go to the earlier kind in KIND_ORDER.
    """
    if rho <= 0:
        raise ValueError("turn radius must be positive")
    sx, sy, spsi = (float(c) for c in start)
    ex, ey, epsi = (float(c) for c in end)
    if not all(math.isfinite(c) for c in (sx, sy, spsi, ex, ey, epsi)):
        raise ValueError("poses must be finite")

    dx, dy = ex - sx, ey - sy
    big_d = math.hypot(dx, dy)
    d = big_d / rho
    if big_d < 1e-12 and abs(wrap_angle(epsi - spsi)) < 1e-12:
        return DubinsPath("LSL", (0.0, 0.0, 0.0), rho, (sx, sy, spsi), (ex, ey, epsi))

    theta = math.atan2(dy, dx) if big_d > 1e-12 else 0.0
    alpha = _mod2pi(spsi - theta)
    beta = _mod2pi(epsi - theta)

    best = None
    best_len = math.inf
    for kind in KIND_ORDER:
        sol = _SOLVERS[kind](alpha, beta, d)
        if sol is None:
            continue
        total = sum(sol) * rho
        if total < best_len - 1e-12:
            best_len = total
            best = DubinsPath(
                kind,
                tuple(seg * rho for seg in sol),
                rho,
                (sx, sy, spsi),
                (ex, ey, epsi),
            )
    if best is None:  # cannot happen: LSL/RSR always admit a solution for d >= 0
        raise RuntimeError("no Dubins word found")
    return best


def endpoint_error(path: DubinsPath) -> tuple:
    """(position error m, heading error rad) of the reconstructed endpoint."""
    x, y, psi = path.point_at(path.length)
    ex, ey, epsi = path.end
    return (math.hypot(x - ex, y - ey), abs(wrap_angle(psi - epsi)))
