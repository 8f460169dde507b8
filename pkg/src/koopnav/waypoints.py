"""Greedy reference waypoint generation with constraint-aware sliding.

Each call proposes a short step from the current position toward the goal.
If the proposal lands inside an obstacle's tightened clearance band (checked
with an extra clearance bonus on top of the margin), the step direction is
projected onto the boundary tangent at the proposal and the step is retaken.
Violations are handled one at a time, deepest first.  Clearance is measured
against the generating disks where the constraint set records them; the
linearized rows under-report clearance a step ahead, which holds slides past
the point where the disk itself has already opened a path.  Any residual
shortfall after sliding is repaired by pushing the candidate outward along
the offending normals; a candidate that still cannot clear the margin is
passed through flagged, leaving the constraint softening in the controller
to absorb it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .halfspaces import ConstraintSet
from .simulation import State


@dataclass(frozen=True)
class RefGenConfig:
    """Step length and clearance behavior of the waypoint generator."""

    step_length: float = 0.4
    clearance_bonus: float = 0.05
    max_repair_iters: int = 20
    goal_tolerance: float = 0.1

    def __post_init__(self):
        if self.step_length <= 0:
            raise ValueError(f"step_length must be > 0, got {self.step_length}")
        if self.clearance_bonus < 0:
            raise ValueError(f"clearance_bonus must be >= 0, got {self.clearance_bonus}")
        if self.goal_tolerance <= 0:
            raise ValueError(f"goal_tolerance must be > 0, got {self.goal_tolerance}")


@dataclass(frozen=True)
class WaypointResult:
    """Next reference pose plus how it was obtained.

    slid: the greedy direction was deflected along a constraint boundary.
    passthrough: no constraint-satisfying waypoint exists from here; the
    returned pose does not clear the required margin and downstream
    softening must absorb it.
    """

    waypoint: State
    slid: bool
    passthrough: bool


def goal_reached(state: State, goal: np.ndarray, tolerance: float = 0.1) -> bool:
    """True when the position lies within the closed tolerance ball."""
    goal = np.asarray(goal, dtype=float).reshape(-1)[:2]
    return float(np.linalg.norm(state.position - goal)) <= tolerance


def _tangent_of(direction: np.ndarray, normal: np.ndarray) -> np.ndarray:
    """Project a unit direction onto a boundary tangent; ccw turn if degenerate."""
    tangential = direction - float(direction @ normal) * normal
    norm = float(np.linalg.norm(tangential))
    if norm < 1e-9:
        # Anti-parallel to the normal: no tangential component survives, so
        # rotate the step direction a quarter turn counterclockwise.
        return np.array([-direction[1], direction[0]])
    return tangential / norm


def next_waypoint(
    state: State,
    goal: np.ndarray,
    constraints: ConstraintSet,
    config: RefGenConfig = RefGenConfig(),
) -> WaypointResult:
    """Propose the next reference pose between the agent and the goal.

    In free space the step shortens the goal distance by exactly
    min(step_length, distance), snapping onto the goal once it lies within
    one step.  The reference heading points along the final step direction.
    """
    goal = np.asarray(goal, dtype=float).reshape(-1)[:2]
    pos = state.position
    delta = goal - pos
    dist = float(np.linalg.norm(delta))

    if dist < 1e-12:
        return WaypointResult(State(goal[0], goal[1], state.theta), False, False)

    direction = delta / dist
    step = min(dist, config.step_length)
    required = constraints.margin + config.clearance_bonus

    if constraints.n_rows == 0:
        target = pos + step * direction
        heading = math.atan2(direction[1], direction[0])
        return WaypointResult(State(target[0], target[1], heading), False, False)

    # An agent already inside the raw obstacle geometry has no safe side to
    # slide along; hand the goal through and let softening cope.
    if float(np.min(constraints.clearances(pos))) < 0.0:
        heading = math.atan2(direction[1], direction[0])
        return WaypointResult(State(goal[0], goal[1], heading), False, True)

    candidate = pos + step * direction
    slid = False
    for _ in range(config.max_repair_iters):
        clearances = constraints.clearances(candidate)
        worst = int(np.argmin(clearances))
        if float(clearances[worst]) >= required:
            break
        normal = constraints.outward_normal(worst, candidate)
        if float(direction @ normal) >= 0.0:
            # Already stepping off the violated boundary; sliding cannot
            # increase clearance any further.
            break
        direction = _tangent_of(direction, normal)
        candidate = pos + step * direction
        slid = True

    # Sliding preserves step length but cannot create clearance when the
    # agent itself sits inside the margin band; push the candidate outward
    # along the offending normals until every row clears.
    for _ in range(config.max_repair_iters):
        clearances = constraints.clearances(candidate)
        worst = int(np.argmin(clearances))
        shortfall = required - float(clearances[worst])
        if shortfall <= 0.0:
            break
        candidate = candidate + shortfall * constraints.outward_normal(worst, candidate)

    passthrough = bool(np.min(constraints.clearances(candidate)) < constraints.margin)

    final_delta = candidate - pos
    if float(np.linalg.norm(final_delta)) > 1e-9:
        heading = math.atan2(final_delta[1], final_delta[0])
    else:
        heading = state.theta
    return WaypointResult(State(candidate[0], candidate[1], heading), slid, passthrough)
