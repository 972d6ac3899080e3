"""Bundled worlds used by the shipped config, the test suite, and the docs."""
from __future__ import annotations

import math

import numpy as np

from .core import AgentState, Environment
from .sim import GridSpec


def empty_environment(side: float = 30.0, goal=None) -> Environment:
    goal = goal or AgentState(side * 0.8, 0.0, 0.0, 0.0)
    return Environment(
        bounds=(0.0, -side / 3, side, side / 3),
        goal=goal,
        goal_tolerance=0.5,
        obstacles=[],
    )


def square_environment() -> Environment:
    """Axis-aligned square block between typical starts and the goal."""
    square = np.array([[12.0, -2.0], [16.0, -2.0], [16.0, 2.0], [12.0, 2.0]])
    return Environment(
        bounds=(0.0, -10.0, 30.0, 10.0),
        goal=AgentState(24.0, 0.0, 0.0, 0.0),
        goal_tolerance=0.5,
        obstacles=[square],
    )


def reference_environment() -> Environment:
    """The shipped single-obstacle scenario: a diamond block centered on the
    start-goal axis, mirror-symmetric about y = 0.

    The diamond's east/west corners point along the axis, so only its north
    and south corners shadow the goal from the start region; routes split
    into an upper and a lower family that are exact mirror images.
    """
    cx, cy, r = 16.0, 0.0, 3.0
    diamond = np.array([[cx + r, cy], [cx, cy + r], [cx - r, cy], [cx, cy - r]])
    return Environment(
        bounds=(0.0, -10.0, 30.0, 10.0),
        goal=AgentState(23.0, 0.0, 0.0, 0.0),
        goal_tolerance=0.5,
        obstacles=[diamond],
    )


def reference_grid() -> GridSpec:
    """Start grid for the reference scenario.

    One column of west-facing starts. Rows sit symmetrically about y = 0
    (none on the axis) so the start set is closed under the world's mirror
    symmetry, and every run opens with a half-turn loop whose direction is
    forced by the start's side: first segments are strongly chiral. Row
    spacing keeps approach bearings into the route corner more than one
    heading cell apart, so pairwise merges concentrate at the corner funnel.
    """
    return GridSpec(
        nx=1,
        ny=6,
        headings=1,
        heading_origin=math.pi,
        x_range=(9.0, 9.0),
        y_range=(-7.5, 7.5),
    )
