"""Ground-truth unicycle plant, obstacle world, and data-collection policies."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

TAU = 2.0 * math.pi


class InvalidInputError(ValueError):
    """Raised when a plant input is non-finite or out of contract."""


class RankDeficiencyWarning(UserWarning):
    """Collected controls carry (near-)zero variance; downstream fits may be rank-deficient."""


def wrap_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    wrapped = math.remainder(theta, TAU)
    if wrapped <= -math.pi:
        wrapped += TAU
    return wrapped


@dataclass(frozen=True)
class State:
    """Planar pose (x, y in meters, theta in radians, wrapped on construction)."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.theta)):
            raise InvalidInputError(f"non-finite state ({self.x}, {self.y}, {self.theta})")
        # Plain floats so downstream repr-based serialization stays portable.
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])


@dataclass(frozen=True)
class Control:
    """Translational velocity v (m/s) and angular velocity omega (rad/s)."""

    v: float
    omega: float

    def __post_init__(self):
        if not (math.isfinite(self.v) and math.isfinite(self.omega)):
            raise InvalidInputError(f"non-finite control ({self.v}, {self.omega})")
        object.__setattr__(self, "v", float(self.v))
        object.__setattr__(self, "omega", float(self.omega))

    def as_array(self) -> np.ndarray:
        return np.array([self.v, self.omega])


@dataclass(frozen=True)
class ControlBounds:
    """Axis-aligned admissible control box."""

    v_min: float = -1.0
    v_max: float = 1.0
    omega_min: float = -2.0
    omega_max: float = 2.0

    def clip(self, control: Control) -> Control:
        return Control(
            min(max(control.v, self.v_min), self.v_max),
            min(max(control.omega, self.omega_min), self.omega_max),
        )

    def contains(self, control: Control, tol: float = 1e-9) -> bool:
        return (
            self.v_min - tol <= control.v <= self.v_max + tol
            and self.omega_min - tol <= control.omega <= self.omega_max + tol
        )


@dataclass(frozen=True)
class Transition:
    state: State
    control: Control
    next_state: State


DEFAULT_DT = 0.1
DEFAULT_WORKSPACE = (-3.0, 3.0, -3.0, 3.0)  # x_min, x_max, y_min, y_max


def unicycle_step(state: State, control: Control, dt: float = DEFAULT_DT) -> State:
    """Advance the unicycle one sample step.

    x' = x + dt*v*cos(theta), y' = y + dt*v*sin(theta), theta' = theta + dt*omega.
    """
    if not (math.isfinite(dt) and dt > 0):
        raise InvalidInputError(f"dt must be positive and finite, got {dt}")
    return State(
        state.x + dt * control.v * math.cos(state.theta),
        state.y + dt * control.v * math.sin(state.theta),
        state.theta + dt * control.omega,
    )


# ---------------------------------------------------------------------------
# Obstacles


@dataclass(frozen=True)
class ObstacleSpec:
    """Disk obstacle with a motion law evaluable at any timestep.

    motion is one of:
      "static"     -- fixed at `center`
      "linear"     -- `center + k * velocity` (velocity in meters per step)
      "sinusoidal" -- `center + amplitude * sin(2*pi*k / period)` (amplitude is a 2-vector)
    `inflation` widens the radius used for constraint construction only; collision
    metrics always use the raw radius.
    """

    id: str
    radius: float
    motion: str = "static"
    center: tuple[float, float] = (0.0, 0.0)
    velocity: tuple[float, float] = (0.0, 0.0)
    amplitude: tuple[float, float] = (0.0, 0.0)
    period: float = 1.0
    inflation: float = 0.0

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError(f"obstacle {self.id!r}: radius must be > 0, got {self.radius}")
        if self.motion not in ("static", "linear", "sinusoidal"):
            raise ValueError(f"obstacle {self.id!r}: unknown motion {self.motion!r}")
        if self.motion == "sinusoidal" and self.period <= 0:
            raise ValueError(f"obstacle {self.id!r}: period must be > 0")

    def center_at(self, k: int) -> np.ndarray:
        if k < 0:
            raise ValueError(f"timestep must be >= 0, got {k}")
        cx, cy = self.center
        if self.motion == "static":
            return np.array([cx, cy])
        if self.motion == "linear":
            vx, vy = self.velocity
            return np.array([cx + k * vx, cy + k * vy])
        phase = math.sin(TAU * k / self.period)
        ax, ay = self.amplitude
        return np.array([cx + ax * phase, cy + ay * phase])

    def constraint_radius(self) -> float:
        return self.radius + self.inflation


def obstacle_center(spec: ObstacleSpec, k: int) -> np.ndarray:
    """Center of the obstacle at step k per its motion law."""
    return spec.center_at(k)


def min_obstacle_distance(state: State, obstacles: list[ObstacleSpec], k: int) -> float:
    """Signed clearance: min over obstacles of (center distance - radius).

    Negative iff the agent point is strictly inside some obstacle disk.
    Returns +inf for an empty obstacle list ("no obstacle").
    """
    if not obstacles:
        return math.inf
    pos = state.position
    return min(float(np.linalg.norm(pos - ob.center_at(k))) - ob.radius for ob in obstacles)


# ---------------------------------------------------------------------------
# Excitation policies for data collection


class RandomControlPolicy:
    """I.i.d. uniform controls over the admissible box."""

    def __init__(self, bounds: ControlBounds = ControlBounds()):
        self.bounds = bounds
        self._rng = None

    def reset(self, state: State, rng: np.random.Generator):
        self._rng = rng

    def __call__(self, state: State, k: int) -> Control:
        b = self.bounds
        return Control(self._rng.uniform(b.v_min, b.v_max), self._rng.uniform(b.omega_min, b.omega_max))


class SmoothedRandomWalkPolicy:
    """Controls follow a clipped random walk, giving smoother excitation."""

    def __init__(self, bounds: ControlBounds = ControlBounds(), step_std: tuple[float, float] = (0.15, 0.4)):
        self.bounds = bounds
        self.step_std = step_std
        self._rng = None
        self._last = None

    def reset(self, state: State, rng: np.random.Generator):
        self._rng = rng
        b = self.bounds
        self._last = Control(rng.uniform(b.v_min, b.v_max), rng.uniform(b.omega_min, b.omega_max))

    def __call__(self, state: State, k: int) -> Control:
        sv, sw = self.step_std
        proposal = Control(self._last.v + self._rng.normal(0.0, sv), self._last.omega + self._rng.normal(0.0, sw))
        self._last = self.bounds.clip(proposal)
        return self._last


class WaypointTrackingPolicy:
    """Proportional waypoint tracking toward randomly drawn goals.

    This is the deployment-like excitation: forward-biased speeds and heading
    corrections of the same character the closed loop produces.  Goals advance
    through the workspace with a configurable drift direction so the visited
    heading distribution matches the missions the model will serve; a lifted
    linear model with a constant input matrix is only as good as the control
    response it sees, and heading-symmetric data averages that response away.
    """

    def __init__(
        self,
        bounds: ControlBounds = ControlBounds(),
        workspace: tuple[float, float, float, float] = DEFAULT_WORKSPACE,
        k_v: float = 1.2,
        k_omega: float = 2.5,
        goal_tolerance: float = 0.15,
        drift: tuple[float, float] = (1.2, 0.0),
        scatter: tuple[float, float] = (0.5, 0.9),
    ):
        self.bounds = bounds
        self.workspace = workspace
        self.k_v = k_v
        self.k_omega = k_omega
        self.goal_tolerance = goal_tolerance
        self.drift = drift
        self.scatter = scatter
        self._rng = None
        self._goal = None

    def _draw_goal(self, state: State) -> np.ndarray:
        dx = self.drift[0] + self._rng.uniform(-self.scatter[0], self.scatter[0])
        dy = self.drift[1] + self._rng.uniform(-self.scatter[1], self.scatter[1])
        return state.position + np.array([dx, dy])

    def reset(self, state: State, rng: np.random.Generator):
        self._rng = rng
        self._goal = self._draw_goal(state)

    def __call__(self, state: State, k: int) -> Control:
        delta = self._goal - state.position
        dist = float(np.linalg.norm(delta))
        if dist <= self.goal_tolerance:
            self._goal = self._draw_goal(state)
            delta = self._goal - state.position
            dist = float(np.linalg.norm(delta))
        bearing_error = wrap_angle(math.atan2(delta[1], delta[0]) - state.theta)
        v = self.k_v * dist * math.cos(bearing_error)
        v = max(v, 0.0)  # forward-only tracking
        omega = self.k_omega * bearing_error
        return self.bounds.clip(Control(v, omega))


POLICIES = {
    "random": RandomControlPolicy,
    "random-walk": SmoothedRandomWalkPolicy,
    "tracking": WaypointTrackingPolicy,
}


def sample_initial_state(
    rng: np.random.Generator,
    workspace: tuple[float, float, float, float] = DEFAULT_WORKSPACE,
    heading_range: tuple[float, float] = (-math.pi, math.pi),
) -> State:
    x_min, x_max, y_min, y_max = workspace
    return State(
        rng.uniform(x_min, x_max),
        rng.uniform(y_min, y_max),
        rng.uniform(heading_range[0], heading_range[1]),
    )


def collect_dataset(
    policy,
    episodes: int,
    steps: int,
    seed: int,
    dt: float = DEFAULT_DT,
    workspace: tuple[float, float, float, float] = DEFAULT_WORKSPACE,
) -> list[Transition]:
    """Roll the plant under an excitation policy and return all transitions.

    Returns episodes*steps transitions, reproducible from the seed.  A policy
    that produces (near-)zero control variance triggers RankDeficiencyWarning.
    """
    rng = np.random.default_rng(seed)
    transitions: list[Transition] = []
    for _ in range(episodes):
        state = sample_initial_state(rng, workspace)
        policy.reset(state, rng)
        for k in range(steps):
            control = policy(state, k)
            next_state = unicycle_step(state, control, dt)
            transitions.append(Transition(state, control, next_state))
            state = next_state
    if transitions:
        controls = np.array([t.control.as_array() for t in transitions])
        if np.all(np.var(controls, axis=0) < 1e-12):
            warnings.warn(
                "collected controls have (near-)zero variance; the regressor "
                "control block will be rank-deficient",
                RankDeficiencyWarning,
                stacklevel=2,
            )
    return transitions


def transitions_to_arrays(transitions: list[Transition]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack transitions into (X, U, X_next) arrays of shape (M, 3), (M, 2), (M, 3)."""
    X = np.array([t.state.as_array() for t in transitions]).reshape(len(transitions), 3)
    U = np.array([t.control.as_array() for t in transitions]).reshape(len(transitions), 2)
    X_next = np.array([t.next_state.as_array() for t in transitions]).reshape(len(transitions), 3)
    return X, U, X_next


# ---------------------------------------------------------------------------
# Dataset persistence

DATASET_SCHEMA = "koopnav-dataset-v1"

_DATASET_COLUMNS = ["x", "y", "theta", "v", "omega", "next_x", "next_y", "next_theta"]


def dataset_to_csv(transitions: list[Transition], extra_metadata: dict | None = None) -> str:
    """CSV of transitions with full-precision floats and a schema comment."""
    import csv
    import io

    buf = io.StringIO()
    buf.write(f"# schema={DATASET_SCHEMA}\n")
    for key in sorted(extra_metadata or {}):
        buf.write(f"# {key}={extra_metadata[key]}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_DATASET_COLUMNS)
    for t in transitions:
        writer.writerow(
            [
                repr(t.state.x),
                repr(t.state.y),
                repr(t.state.theta),
                repr(t.control.v),
                repr(t.control.omega),
                repr(t.next_state.x),
                repr(t.next_state.y),
                repr(t.next_state.theta),
            ]
        )
    return buf.getvalue()


def dataset_from_csv(text: str) -> list[Transition]:
    import csv

    lines = text.splitlines()
    if not lines or not lines[0].startswith("# schema="):
        raise ValueError("missing schema comment line in dataset CSV")
    schema = lines[0][len("# schema=") :]
    if schema != DATASET_SCHEMA:
        raise ValueError(f"unsupported dataset schema {schema!r}; expected {DATASET_SCHEMA!r}")
    body = [line for line in lines[1:] if not line.startswith("# ")]
    reader = csv.reader(body)
    header = next(reader)
    if header != _DATASET_COLUMNS:
        missing = [c for c in _DATASET_COLUMNS if c not in header]
        raise ValueError(f"dataset CSV missing columns: {missing}")
    transitions = []
    for row in reader:
        if not row:
            continue
        transitions.append(
            Transition(
                State(float(row[0]), float(row[1]), float(row[2])),
                Control(float(row[3]), float(row[4])),
                State(float(row[5]), float(row[6]), float(row[7])),
            )
        )
    return transitions
