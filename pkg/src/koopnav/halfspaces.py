"""Half-space safety constraints from disk obstacles.

Each disk obstacle is locally replaced by the half-space tangent at the
boundary point nearest the agent: with unit outward normal n pointing from
the obstacle center toward the agent, the safe side is
n . (q - center) - radius >= 0.  Unit normals keep the constraint functions
1-Lipschitz in position, so a position-error bound maps one-to-one onto a
constraint margin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .simulation import ObstacleSpec

UNIT_NORMAL_TOL = 1e-12


class DegenerateNormalError(ValueError):
    """Agent coincides with the obstacle center; no tangent direction exists."""


@dataclass(frozen=True)
class HalfSpace:
    """Closed planar half-space {q : a*q_x + b*q_y + c >= 0} with unit normal."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        norm = math.hypot(self.a, self.b)
        if abs(norm - 1.0) > UNIT_NORMAL_TOL:
            raise ValueError(
                f"half-space normal ({self.a}, {self.b}) has norm {norm!r}; "
                f"must be 1 within {UNIT_NORMAL_TOL:.0e}"
            )

    @property
    def normal(self) -> np.ndarray:
        return np.array([self.a, self.b])

    def value(self, position: np.ndarray) -> float:
        """Signed constraint value; nonnegative iff position is on the safe side."""
        position = np.asarray(position, dtype=float).reshape(-1)
        return float(self.a * position[0] + self.b * position[1] + self.c)

    def contains(self, position: np.ndarray, margin: float = 0.0) -> bool:
        return self.value(position) >= margin


def halfspace_from_circle(
    agent_position: np.ndarray, center: np.ndarray, radius: float
) -> HalfSpace:
    """Tangent half-space of a disk at the boundary point nearest the agent.

    The normal points from the obstacle center toward the agent, so the
    agent-side region is marked safe.  Raises DegenerateNormalError when the
    agent sits at the center (direction undefined).
    """
    agent_position = np.asarray(agent_position, dtype=float).reshape(-1)[:2]
    center = np.asarray(center, dtype=float).reshape(-1)[:2]
    if radius <= 0:
        raise ValueError(f"radius must be > 0, got {radius}")
    delta = agent_position - center
    norm = float(np.linalg.norm(delta))
    if norm < 1e-12:
        raise DegenerateNormalError(
            f"agent position {agent_position.tolist()} coincides with obstacle "
            f"center {center.tolist()}; tangent direction undefined"
        )
    n = delta / norm
    # n . (q - center) - radius >= 0  =>  a q_x + b q_y + c >= 0
    c = -float(n @ center) - radius
    return HalfSpace(float(n[0]), float(n[1]), c)


def tighten(halfspace: HalfSpace, margin: float) -> "TightenedHalfSpace":
    """Attach a required margin, turning h(q) >= 0 into h(q) >= margin."""
    if margin < 0:
        raise ValueError(f"margin must be >= 0, got {margin}")
    return TightenedHalfSpace(halfspace.a, halfspace.b, halfspace.c, margin)


@dataclass(frozen=True)
class TightenedHalfSpace(HalfSpace):
    """Half-space carrying its tightening margin; the offset c is untouched.

    Satisfaction means h(q) >= margin.  Keeping the margin separate preserves
    the raw geometry for logging and lets one geometry serve several margins.
    """

    margin: float = 0.0

    def satisfied(self, position: np.ndarray) -> bool:
        return self.value(position) >= self.margin


@dataclass(frozen=True)
class ConstraintSet:
    """Stacked tightened half-spaces H q + c >= margin, ordered by obstacle id.

    H is (R, 2) of unit rows, offsets is (R,), margin is the common tightening,
    ids records the source obstacle of each row.  centers and radii keep the
    generating disks so clearance can be evaluated exactly away from the
    linearization point; they may be None when only the rows are known.
    """

    H: np.ndarray
    offsets: np.ndarray
    margin: float
    ids: tuple[str, ...]
    centers: np.ndarray | None = None
    radii: np.ndarray | None = None

    @property
    def n_rows(self) -> int:
        return int(self.H.shape[0])

    def rows(self) -> list[TightenedHalfSpace]:
        return [
            TightenedHalfSpace(float(self.H[i, 0]), float(self.H[i, 1]), float(self.offsets[i]), self.margin)
            for i in range(self.n_rows)
        ]

    def values(self, position: np.ndarray) -> np.ndarray:
        """Raw constraint values h_i(position) for every row."""
        position = np.asarray(position, dtype=float).reshape(-1)[:2]
        return self.H @ position + self.offsets

    def clearances(self, position: np.ndarray) -> np.ndarray:
        """Exact signed distance to each generating disk, margin excluded.

        The tangent rows under-report clearance everywhere except at the
        linearization point, so candidate positions a step away should be
        judged against the disks themselves.  Falls back to the row values
        when the disk geometry was not recorded.
        """
        if self.centers is None or self.radii is None:
            return self.values(position)
        position = np.asarray(position, dtype=float).reshape(-1)[:2]
        return np.linalg.norm(position - self.centers, axis=1) - self.radii

    def outward_normal(self, row: int, position: np.ndarray) -> np.ndarray:
        """Unit gradient of the row's clearance at a position.

        For a recorded disk this points from its center toward the position;
        a degenerate direction (position at the center) and the no-geometry
        case both fall back to the stored row normal.
        """
        if self.centers is None:
            return self.H[row]
        position = np.asarray(position, dtype=float).reshape(-1)[:2]
        delta = position - self.centers[row]
        norm = float(np.linalg.norm(delta))
        if norm < 1e-12:
            return self.H[row]
        return delta / norm

    def satisfied(self, position: np.ndarray) -> bool:
        if self.n_rows == 0:
            return True
        return bool(np.all(self.values(position) >= self.margin))

    def worst_violation(self, position: np.ndarray) -> float:
        """Largest margin shortfall at the position (0 when all rows hold)."""
        if self.n_rows == 0:
            return 0.0
        return float(max(0.0, np.max(self.margin - self.values(position))))


def build_constraint_set(
    obstacles: list[ObstacleSpec],
    k: int,
    agent_position: np.ndarray,
    margin: float,
    velocity_lookahead: int = 0,
) -> ConstraintSet:
    """Linearize every obstacle around the agent at step k and stack the rows.

    Rows are ordered by obstacle id so a fixed world yields a fixed row order.
    Obstacle inflation (if any) widens the radius used here.  With a positive
    velocity_lookahead, linear-motion obstacles are linearized at their
    propagated center k + lookahead steps ahead; other motions stay at k.
    """
    ordered = sorted(obstacles, key=lambda ob: ob.id)
    rows, offsets, ids, centers, radii = [], [], [], [], []
    for ob in ordered:
        k_eff = k + velocity_lookahead if ob.motion == "linear" else k
        center = ob.center_at(k_eff)
        radius = ob.constraint_radius()
        try:
            hs = halfspace_from_circle(agent_position, center, radius)
        except DegenerateNormalError as exc:
            raise DegenerateNormalError(f"obstacle {ob.id!r}: {exc}") from exc
        rows.append([hs.a, hs.b])
        offsets.append(hs.c)
        ids.append(ob.id)
        centers.append(center)
        radii.append(radius)
    H = np.array(rows, dtype=float).reshape(len(rows), 2)
    return ConstraintSet(
        H,
        np.array(offsets, dtype=float),
        margin,
        tuple(ids),
        np.array(centers, dtype=float).reshape(len(centers), 2),
        np.array(radii, dtype=float),
    )
