"""Reference-tracking MPC on the lifted linear model with tightened constraints.

The finite-horizon problem tracks a lifted waypoint under the identified
dynamics z+ = A z + B u, admissible control box, and tightened half-space
rows applied to the predicted positions of steps 0..N-1.  Constraints are
softened by a shared slack vector (one entry per constraint row, shared
across the horizon) plus a per-step slack vector, with a quadratic penalty
and a linear penalty on either the elementwise sum (1-norm) or per-step
maxima (infinity-norm, via epigraph variables).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .halfspaces import ConstraintSet, build_constraint_set
from .koopman import DegenerateHeadingError, KoopmanEdmdc
from .qp import AdmmQpSolver, QpProblem, QpSettings, QpSolution, STATUS_OPTIMAL
from .simulation import Control, ControlBounds, ObstacleSpec, State

SLACK_NORMS = ("l1", "linf")


@dataclass(frozen=True)
class MpcConfig:
    """Horizon, weights, and softening behavior of the tracking MPC.

    q_matrix / r_matrix override the scalar-built diagonal penalties with
    full matrices (validated against the model dimensions at build time).
    """

    horizon: int = 10
    q_position: float = 10.0
    q_other: float = 1.0
    r_control: float = 0.1
    s_quadratic: float = 1e3
    rho_linear: float = 1e3
    eps_max: float = 0.5
    slack_norm: str = "l1"
    soften: bool = True
    # The surrogate interpolates its training excitation; commanding speeds
    # far below it leaves the model's validity envelope (the fit ascribes the
    # mean training speed to autonomous drift).  The controller therefore
    # keeps a forward-speed floor; the plant's admissible set is unchanged.
    min_speed: float = 0.35
    q_matrix: np.ndarray | None = field(default=None, compare=False)
    r_matrix: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if self.slack_norm not in SLACK_NORMS:
            raise ValueError(f"slack_norm must be one of {SLACK_NORMS}, got {self.slack_norm!r}")
        if self.eps_max <= 0:
            raise ValueError(f"eps_max must be > 0, got {self.eps_max}")

    def state_weights(self, p: int) -> np.ndarray:
        """Diagonal of the lifted tracking weight; positions get q_position."""
        w = np.full(p, self.q_other)
        w[0] = self.q_position
        w[1] = self.q_position
        return w

    def state_penalty(self, p: int) -> np.ndarray:
        """Full state penalty matrix, from q_matrix or the scalar diagonal."""
        if self.q_matrix is None:
            return np.diag(self.state_weights(p))
        Q = np.asarray(self.q_matrix, dtype=float)
        if Q.shape != (p, p):
            raise ValueError(f"q_matrix must be {p}x{p} for this model, got {Q.shape}")
        if not np.allclose(Q, Q.T, atol=1e-10):
            raise ValueError("q_matrix must be symmetric")
        return Q

    def control_penalty(self, m: int) -> np.ndarray:
        """Full control penalty matrix, from r_matrix or the scalar diagonal."""
        if self.r_matrix is None:
            return self.r_control * np.eye(m)
        R = np.asarray(self.r_matrix, dtype=float)
        if R.shape != (m, m):
            raise ValueError(f"r_matrix must be {m}x{m} for this model, got {R.shape}")
        if not np.allclose(R, R.T, atol=1e-10):
            raise ValueError("r_matrix must be symmetric")
        return R


@dataclass(frozen=True)
class MpcIndexing:
    """Positions of the decision blocks inside the stacked QP vector."""

    p: int
    m: int
    N: int
    n_rows: int
    soften: bool
    linf: bool

    @property
    def n_z(self) -> int:
        return self.N * self.p

    @property
    def n_u(self) -> int:
        return self.N * self.m

    @property
    def n_slack(self) -> int:
        return (self.N + 1) * self.n_rows if self.soften else 0

    @property
    def n_epigraph(self) -> int:
        return (self.N + 1) if (self.soften and self.linf and self.n_rows) else 0

    @property
    def n_total(self) -> int:
        return self.n_z + self.n_u + self.n_slack + self.n_epigraph

    def z_block(self, i: int) -> slice:
        """Predicted lifted state i, for i in 1..N."""
        if not 1 <= i <= self.N:
            raise IndexError(f"z index {i} outside 1..{self.N}")
        return slice((i - 1) * self.p, i * self.p)

    def u_block(self, i: int) -> slice:
        """Control input i, for i in 0..N-1."""
        if not 0 <= i < self.N:
            raise IndexError(f"u index {i} outside 0..{self.N - 1}")
        return slice(self.n_z + i * self.m, self.n_z + (i + 1) * self.m)

    def step_slack_block(self, i: int) -> slice:
        """Per-step slack vector i, for i in 0..N-1."""
        base = self.n_z + self.n_u
        return slice(base + i * self.n_rows, base + (i + 1) * self.n_rows)

    def shared_slack_block(self) -> slice:
        base = self.n_z + self.n_u + self.N * self.n_rows
        return slice(base, base + self.n_rows)

    def epigraph_index(self, i: int) -> int:
        """Epigraph variable for step i in 0..N-1; i = N is the shared one."""
        return self.n_z + self.n_u + self.n_slack + i


def _as_lifted(model: KoopmanEdmdc, value: State | np.ndarray, p: int) -> np.ndarray:
    if isinstance(value, State):
        return model.dictionary_.lift_one(value)
    z = np.asarray(value, dtype=float).reshape(-1)
    if z.shape[0] != p:
        raise ValueError(f"lifted state must have length {p}, got {z.shape[0]}")
    return z


def build_mpc_qp(
    model: KoopmanEdmdc,
    state: State | np.ndarray,
    reference: State | np.ndarray,
    constraints: ConstraintSet,
    config: MpcConfig = MpcConfig(),
    bounds: ControlBounds = ControlBounds(),
) -> tuple[QpProblem, MpcIndexing]:
    """Assemble the horizon QP for one solve.

    state and reference are physical poses (lifted here) or already-lifted
    vectors.  The reference is tracked at every step of the horizon.  Safety
    rows apply to predicted steps 0..N-1; the step-0 state is a constant, so
    its row involves only slack variables (softened mode) or is omitted
    (hard mode).
    """
    A, B = model.A_, model.B_
    p = A.shape[0]
    m = B.shape[1]
    N = config.horizon
    R = constraints.n_rows
    z0 = _as_lifted(model, state, p)
    z_ref = _as_lifted(model, reference, p)

    idx = MpcIndexing(p, m, N, R, config.soften, config.slack_norm == "linf")
    n = idx.n_total

    # Objective.
    P = np.zeros((n, n))
    q = np.zeros(n)
    d = 0.0
    Qm = config.state_penalty(p)
    Rm = config.control_penalty(m)
    for i in range(1, N + 1):
        blk = idx.z_block(i)
        P[blk, blk] = 2.0 * Qm
        q[blk] = -2.0 * (Qm @ z_ref)
        d += float(z_ref @ (Qm @ z_ref))
    for i in range(N):
        blk = idx.u_block(i)
        P[blk, blk] = 2.0 * Rm
    if config.soften and R:
        slack_all = slice(idx.n_z + idx.n_u, idx.n_z + idx.n_u + idx.n_slack)
        P[slack_all, slack_all] = 2.0 * config.s_quadratic * np.eye(idx.n_slack)
        if idx.linf:
            for i in range(N + 1):
                q[idx.epigraph_index(i)] = config.rho_linear
        else:
            q[slack_all.start : slack_all.stop] = config.rho_linear

    # Dynamics equalities.
    A_eq = np.zeros((N * p, n))
    b_eq = np.zeros(N * p)
    A_eq[0:p, idx.z_block(1)] = np.eye(p)
    A_eq[0:p, idx.u_block(0)] = -B
    b_eq[0:p] = A @ z0
    for i in range(1, N):
        rows = slice(i * p, (i + 1) * p)
        A_eq[rows, idx.z_block(i + 1)] = np.eye(p)
        A_eq[rows, idx.z_block(i)] = -A
        A_eq[rows, idx.u_block(i)] = -B
    b_eq_rows = b_eq

    # Inequalities.
    rows_C: list[np.ndarray] = []
    rows_l: list[float] = []
    rows_u: list[float] = []

    def add_row(coeffs: dict[int, float], lo: float, hi: float):
        row = np.zeros(n)
        for j, v in coeffs.items():
            row[j] = v
        rows_C.append(row)
        rows_l.append(lo)
        rows_u.append(hi)

    H, offsets, margin = constraints.H, constraints.offsets, constraints.margin
    pos0 = z0[:2]
    h0 = H @ pos0 + offsets if R else np.zeros(0)

    if R:
        if config.soften:
            shared = idx.shared_slack_block()
            step0 = idx.step_slack_block(0)
            for r in range(R):
                add_row(
                    {step0.start + r: 1.0, shared.start + r: 1.0},
                    margin - float(h0[r]),
                    math.inf,
                )
        for i in range(1, N):
            zb = idx.z_block(i)
            for r in range(R):
                coeffs = {zb.start: float(H[r, 0]), zb.start + 1: float(H[r, 1])}
                if config.soften:
                    coeffs[idx.step_slack_block(i).start + r] = 1.0
                    coeffs[idx.shared_slack_block().start + r] = 1.0
                add_row(coeffs, margin - float(offsets[r]), math.inf)

    if config.soften and R:
        shared = idx.shared_slack_block()
        for i in range(N):
            step = idx.step_slack_block(i)
            for r in range(R):
                add_row({step.start + r: 1.0, shared.start + r: 1.0}, -math.inf, config.eps_max)
        for j in range(idx.n_z + idx.n_u, idx.n_z + idx.n_u + idx.n_slack):
            add_row({j: 1.0}, 0.0, math.inf)
        if idx.linf:
            for i in range(N):
                step = idx.step_slack_block(i)
                t_i = idx.epigraph_index(i)
                for r in range(R):
                    add_row({t_i: 1.0, step.start + r: -1.0}, 0.0, math.inf)
            t_s = idx.epigraph_index(N)
            for r in range(R):
                add_row({t_s: 1.0, shared.start + r: -1.0}, 0.0, math.inf)
            for i in range(N + 1):
                add_row({idx.epigraph_index(i): 1.0}, 0.0, math.inf)

    v_floor = max(bounds.v_min, min(config.min_speed, bounds.v_max))
    for i in range(N):
        ub = idx.u_block(i)
        add_row({ub.start: 1.0}, v_floor, bounds.v_max)
        add_row({ub.start + 1: 1.0}, bounds.omega_min, bounds.omega_max)

    A_in = np.array(rows_C) if rows_C else None
    l_in = np.array(rows_l) if rows_C else None
    u_in = np.array(rows_u) if rows_C else None
    problem = QpProblem(P, q, A_eq, b_eq_rows, A_in, l_in, u_in, d)
    return problem, idx


@dataclass
class MpcStepResult:
    """Outcome of one closed-loop MPC step.

    predicted_traj stacks the lifted trajectory over the horizon, current
    state included, so row 0 is the lifted measurement and row i the
    optimizer's step-i prediction.  Slack values below solver tolerance are
    clipped to zero.
    """

    control: Control
    fallback: bool
    status: str
    iterations: int
    solve_time: float
    objective: float
    slack_shared: np.ndarray
    slack_steps: np.ndarray
    slack_shared_max: float
    slack_step_max: float
    predicted_traj: np.ndarray | None
    predicted_next: State | None
    solution: QpSolution
    warm_started: bool


# Receding-horizon solves tolerate a looser ADMM stop because the active-set
# polish refines the returned point; the loose stop roughly halves iteration
# counts, which is what keeps per-step latency inside the control period.
MPC_QP_SETTINGS = QpSettings(eps_abs=1e-4, eps_rel=1e-4, check_interval=10, scaling_iters=3)


class MpcController:
    """Stateful wrapper that builds, solves, and warm starts the horizon QP."""

    def __init__(
        self,
        model: KoopmanEdmdc,
        config: MpcConfig = MpcConfig(),
        bounds: ControlBounds = ControlBounds(),
        settings: QpSettings = MPC_QP_SETTINGS,
        use_warm_start: bool = True,
    ):
        self.model = model
        self.config = config
        self.bounds = bounds
        self.solver = AdmmQpSolver(settings)
        self.use_warm_start = use_warm_start
        self._last: tuple[int, np.ndarray, np.ndarray] | None = None

    def reset(self):
        self._last = None

    def step(self, state: State, waypoint: State, constraints: ConstraintSet) -> MpcStepResult:
        """Solve the horizon problem at the current state and return u_0.

        Falls back to zero control when the solver does not reach optimality.
        """
        problem, idx = build_mpc_qp(
            self.model, state, waypoint, constraints, self.config, self.bounds
        )
        key = (problem.n, problem.n_eq + problem.n_in)
        warm = None
        if self.use_warm_start and self._last is not None and self._last[0] == hash(key):
            warm = (self._last[1], self._last[2])
        solution = self.solver.solve(problem, warm_start=warm)
        if solution.status == STATUS_OPTIMAL:
            self._last = (hash(key), solution.w.copy(), solution.y.copy())
        else:
            self._last = None
        z0 = _as_lifted(self.model, state, idx.p)
        return _extract_result(
            self.model, solution, idx, z0, self.config, self.bounds, warm is not None
        )


def _extract_result(
    model: KoopmanEdmdc,
    solution: QpSolution,
    idx: MpcIndexing,
    z0: np.ndarray,
    config: MpcConfig,
    bounds: ControlBounds,
    warm_started: bool,
) -> MpcStepResult:
    N, R = idx.N, idx.n_rows
    if solution.status != STATUS_OPTIMAL:
        return MpcStepResult(
            control=Control(0.0, 0.0),
            fallback=True,
            status=solution.status,
            iterations=solution.iterations,
            solve_time=solution.solve_time,
            objective=solution.objective,
            slack_shared=np.zeros(R),
            slack_steps=np.zeros((N, R)),
            slack_shared_max=0.0,
            slack_step_max=0.0,
            predicted_traj=None,
            predicted_next=None,
            solution=solution,
            warm_started=warm_started,
        )

    u0 = solution.w[idx.u_block(0)]
    control = bounds.clip(Control(float(u0[0]), float(u0[1])))
    predicted_traj = np.empty((N + 1, idx.p))
    predicted_traj[0] = z0
    for i in range(1, N + 1):
        predicted_traj[i] = solution.w[idx.z_block(i)]
    try:
        predicted = model.dictionary_.decode(predicted_traj[1])
        if not isinstance(predicted, State):
            predicted = None
    except DegenerateHeadingError:
        predicted = None

    slack_shared = np.zeros(R)
    slack_steps = np.zeros((N, R))
    if config.soften and R:
        slack_shared = np.maximum(solution.w[idx.shared_slack_block()], 0.0)
        for i in range(N):
            slack_steps[i] = np.maximum(solution.w[idx.step_slack_block(i)], 0.0)
    return MpcStepResult(
        control=control,
        fallback=False,
        status=solution.status,
        iterations=solution.iterations,
        solve_time=solution.solve_time,
        objective=solution.objective,
        slack_shared=slack_shared,
        slack_steps=slack_steps,
        slack_shared_max=float(np.max(slack_shared, initial=0.0)),
        slack_step_max=float(np.max(slack_steps, initial=0.0)),
        predicted_traj=predicted_traj,
        predicted_next=predicted,
        solution=solution,
        warm_started=warm_started,
    )


def mpc_step(
    model: KoopmanEdmdc,
    state: State,
    reference: State,
    obstacles: list[ObstacleSpec],
    k: int,
    margin: float,
    config: MpcConfig = MpcConfig(),
    bounds: ControlBounds = ControlBounds(),
    settings: QpSettings = MPC_QP_SETTINGS,
    warm_start: tuple[np.ndarray, np.ndarray] | None = None,
) -> MpcStepResult:
    """One MPC step: linearize obstacles at step k, solve, return u_0.

    The caller may thread (w, y) from the previous solution back in as the
    warm start; the returned result carries the solution for that purpose.
    """
    constraints = build_constraint_set(obstacles, k, state.position, margin)
    problem, idx = build_mpc_qp(model, state, reference, constraints, config, bounds)
    solution = AdmmQpSolver(settings).solve(problem, warm_start=warm_start)
    z0 = _as_lifted(model, state, idx.p)
    return _extract_result(model, solution, idx, z0, config, bounds, warm_start is not None)
