"""Dense convex QP solver using ADMM with operator splitting.

Solves
    minimize   0.5 w'Pw + q'w + d
    subject to A_eq w = b_eq,  l_in <= A_in w <= u_in

by stacking all constraints as l <= C w <= u and iterating the standard
splitting: a ridge-regularized KKT solve, over-relaxation, projection onto
the constraint interval, and a dual ascent step.  Equality rows get a much
stiffer penalty weight than inequality rows.  Supports Ruiz equilibration,
adaptive penalty updates, warm starting, active-set polishing, and
heuristic primal/dual infeasibility certificates.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

STATUS_OPTIMAL = "optimal"
STATUS_MAX_ITERATIONS = "max-iterations"
STATUS_INFEASIBLE = "infeasible-detected"

SYMMETRY_TOL = 1e-10


@dataclass(frozen=True)
class QpProblem:
    """Data of one convex QP; immutable after validation.

    P must be symmetric (within 1e-10) positive semidefinite; b_eq finite;
    l_in <= u_in elementwise with infinities allowed for one-sided rows.
    """

    P: np.ndarray
    q: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_in: np.ndarray | None = None
    l_in: np.ndarray | None = None
    u_in: np.ndarray | None = None
    d: float = 0.0

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        q = np.asarray(self.q, dtype=float).reshape(-1)
        n = q.shape[0]
        if P.shape != (n, n):
            raise ValueError(f"P has shape {P.shape}, expected ({n}, {n})")
        if not np.all(np.isfinite(P)) or not np.all(np.isfinite(q)):
            raise ValueError("P and q must be finite")
        asym = float(np.max(np.abs(P - P.T))) if n else 0.0
        if asym > SYMMETRY_TOL:
            raise ValueError(f"P is asymmetric by {asym:.3e} (tolerance {SYMMETRY_TOL:.0e})")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "q", q)
        if (self.A_eq is None) != (self.b_eq is None):
            raise ValueError("A_eq and b_eq must be given together")
        if self.A_eq is not None:
            A_eq = np.asarray(self.A_eq, dtype=float)
            b_eq = np.asarray(self.b_eq, dtype=float).reshape(-1)
            if A_eq.ndim != 2 or A_eq.shape[1] != n or A_eq.shape[0] != b_eq.shape[0]:
                raise ValueError(
                    f"equality block shapes {A_eq.shape} / {b_eq.shape} inconsistent with n={n}"
                )
            if not np.all(np.isfinite(A_eq)) or not np.all(np.isfinite(b_eq)):
                raise ValueError("equality constraints must be finite")
            object.__setattr__(self, "A_eq", A_eq)
            object.__setattr__(self, "b_eq", b_eq)
        if (self.A_in is None) != (self.l_in is None) or (self.A_in is None) != (self.u_in is None):
            raise ValueError("A_in, l_in, u_in must be given together")
        if self.A_in is not None:
            A_in = np.asarray(self.A_in, dtype=float)
            l_in = np.asarray(self.l_in, dtype=float).reshape(-1)
            u_in = np.asarray(self.u_in, dtype=float).reshape(-1)
            if A_in.ndim != 2 or A_in.shape[1] != n or A_in.shape[0] != l_in.shape[0] or A_in.shape[0] != u_in.shape[0]:
                raise ValueError(
                    f"inequality block shapes {A_in.shape} / {l_in.shape} / {u_in.shape} "
                    f"inconsistent with n={n}"
                )
            if not np.all(np.isfinite(A_in)):
                raise ValueError("A_in must be finite")
            if np.any(np.isnan(l_in)) or np.any(np.isnan(u_in)):
                raise ValueError("l_in and u_in must not contain NaN")
            if np.any(l_in > u_in):
                bad = int(np.argmax(l_in > u_in))
                raise ValueError(f"l_in > u_in at row {bad}: {l_in[bad]} > {u_in[bad]}")
            object.__setattr__(self, "A_in", A_in)
            object.__setattr__(self, "l_in", l_in)
            object.__setattr__(self, "u_in", u_in)

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def n_eq(self) -> int:
        return 0 if self.A_eq is None else self.A_eq.shape[0]

    @property
    def n_in(self) -> int:
        return 0 if self.A_in is None else self.A_in.shape[0]

    def stacked(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All constraints as (C, l, u) with equality rows first."""
        blocks_C, blocks_l, blocks_u = [], [], []
        if self.A_eq is not None:
            blocks_C.append(self.A_eq)
            blocks_l.append(self.b_eq)
            blocks_u.append(self.b_eq)
        if self.A_in is not None:
            blocks_C.append(self.A_in)
            blocks_l.append(self.l_in)
            blocks_u.append(self.u_in)
        if not blocks_C:
            return np.zeros((0, self.n)), np.zeros(0), np.zeros(0)
        return np.vstack(blocks_C), np.concatenate(blocks_l), np.concatenate(blocks_u)

    def objective(self, w: np.ndarray) -> float:
        w = np.asarray(w, dtype=float).reshape(-1)
        return float(0.5 * w @ self.P @ w + self.q @ w + self.d)


@dataclass(frozen=True)
class QpSettings:
    """Solver tolerances and behavior switches."""

    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    max_iter: int = 20000
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    eps_pinf: float = 1e-6
    eps_dinf: float = 1e-6
    check_interval: int = 25
    polish: bool = True
    scaling_iters: int = 10
    adaptive_rho: bool = True
    adaptive_rho_interval: int = 100
    rho_eq_scale: float = 1e3
    rho_min: float = 1e-6
    rho_max: float = 1e6

    def __post_init__(self):
        if not (0 < self.alpha < 2):
            raise ValueError(f"relaxation alpha must lie in (0, 2), got {self.alpha}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.rho <= 0 or self.sigma <= 0:
            raise ValueError("rho and sigma must be > 0")


@dataclass(frozen=True)
class KktResiduals:
    """Optimality residuals of a primal/dual pair, all in the infinity norm."""

    stationarity: float
    primal: float
    dual: float
    complementarity: float

    @property
    def max(self) -> float:
        return max(self.stationarity, self.primal, self.dual, self.complementarity)


@dataclass
class QpSolution:
    """Result of one solve; y stacks equality duals before inequality duals."""

    w: np.ndarray
    y: np.ndarray
    status: str
    iterations: int
    solve_time: float
    objective: float
    residuals: KktResiduals
    polished: bool = False
    certificate: str | None = None

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OPTIMAL

    def to_json(self, problem: QpProblem | None = None) -> str:
        payload = {
            "status": self.status,
            "iterations": self.iterations,
            "solve_time": self.solve_time,
            "objective": self.objective,
            "polished": self.polished,
            "certificate": self.certificate,
            "residuals": {
                "stationarity": self.residuals.stationarity,
                "primal": self.residuals.primal,
                "dual": self.residuals.dual,
                "complementarity": self.residuals.complementarity,
            },
            "w": self.w.tolist(),
            "y": self.y.tolist(),
        }
        if problem is not None:
            payload["problem"] = {
                "n": problem.n,
                "n_eq": problem.n_eq,
                "n_in": problem.n_in,
            }
        return json.dumps(payload, indent=2)


def kkt_residuals(problem: QpProblem, w: np.ndarray, y: np.ndarray) -> KktResiduals:
    """Infinity-norm KKT residuals for C w in [l, u] with multipliers y.

    Sign convention: stationarity is P w + q + C'y = 0 with y_i >= 0 on an
    active upper bound and y_i <= 0 on an active lower bound.
    """
    w = np.asarray(w, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    C, l, u = problem.stacked()
    if y.shape[0] != C.shape[0]:
        raise ValueError(f"expected {C.shape[0]} multipliers, got {y.shape[0]}")
    station = problem.P @ w + problem.q
    if C.shape[0]:
        station = station + C.T @ y
    stationarity = float(np.max(np.abs(station))) if station.size else 0.0
    if C.shape[0] == 0:
        return KktResiduals(stationarity, 0.0, 0.0, 0.0)
    c = C @ w
    primal = float(np.max(np.maximum(np.maximum(l - c, c - u), 0.0)))
    y_pos = np.maximum(y, 0.0)
    y_neg = np.maximum(-y, 0.0)
    # Multiplier pointing at an absent (infinite) bound is a dual violation.
    dual = 0.0
    if np.any(np.isinf(u)):
        dual = max(dual, float(np.max(y_pos[np.isinf(u)], initial=0.0)))
    if np.any(np.isinf(l)):
        dual = max(dual, float(np.max(y_neg[np.isinf(l)], initial=0.0)))
    gap_u = np.where(np.isinf(u), 0.0, np.abs(u - c))
    gap_l = np.where(np.isinf(l), 0.0, np.abs(c - l))
    complementarity = float(np.max(y_pos * gap_u + y_neg * gap_l, initial=0.0))
    return KktResiduals(stationarity, primal, dual, complementarity)


def _ruiz_equilibrate(
    P: np.ndarray, q: np.ndarray, C: np.ndarray, iters: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray, float]:
    """Scale the problem data to unit-ish row/column norms.

    Returns (P_s, q_s, C_s, D, E, cost_scale) where w = D w_s and
    y = E y_s / cost_scale recover unscaled quantities.
    """
    n = P.shape[0]
    m = C.shape[0]
    D = np.ones(n)
    E = np.ones(m)
    cost = 1.0
    Ps, qs, Cs = P.copy(), q.copy(), C.copy()
    for _ in range(iters):
        col = np.maximum(
            np.max(np.abs(Ps), axis=0, initial=0.0),
            np.max(np.abs(Cs), axis=0, initial=0.0) if m else 0.0,
        )
        d = 1.0 / np.sqrt(np.where(col > 1e-12, col, 1.0))
        if m:
            row = np.max(np.abs(Cs), axis=1, initial=0.0)
            e = 1.0 / np.sqrt(np.where(row > 1e-12, row, 1.0))
        else:
            e = np.ones(0)
        Ps = (d[:, None] * Ps) * d[None, :]
        qs = d * qs
        if m:
            Cs = (e[:, None] * Cs) * d[None, :]
        D *= d
        E *= e
        # Normalize the cost so P and q are O(1).
        p_cols = np.max(np.abs(Ps), axis=0, initial=0.0)
        mean_p = float(np.mean(p_cols)) if n else 0.0
        g = max(mean_p, float(np.max(np.abs(qs), initial=0.0)))
        g = 1.0 / g if g > 1e-12 else 1.0
        Ps *= g
        qs *= g
        cost *= g
    return Ps, qs, Cs, D, E, cost


class AdmmQpSolver:
    """Reusable solver; successive solves of same-shaped problems can warm start."""

    def __init__(self, settings: QpSettings = QpSettings()):
        self.settings = settings

    def solve(
        self,
        problem: QpProblem,
        warm_start: tuple[np.ndarray, np.ndarray] | None = None,
    ) -> QpSolution:
        """Solve one QP; warm_start is an optional (w0, y0) primal/dual guess."""
        t0 = time.perf_counter()
        s = self.settings
        n = problem.n
        C, l, u = problem.stacked()
        m = C.shape[0]

        if s.scaling_iters > 0:
            Ps, qs, Cs, D, E, cost = _ruiz_equilibrate(
                problem.P, problem.q, C, s.scaling_iters
            )
            ls, us = E * l, E * u
        else:
            Ps, qs, Cs, D, E, cost = problem.P, problem.q, C, np.ones(n), np.ones(m), 1.0
            ls, us = l, u

        eq_mask = np.isfinite(ls) & np.isfinite(us) & (ls == us)
        free_mask = np.isinf(ls) & np.isinf(us)

        def rho_vector(base: float) -> np.ndarray:
            rho_vec = np.full(m, base)
            rho_vec[eq_mask] = base * s.rho_eq_scale
            rho_vec[free_mask] = s.rho_min
            return np.clip(rho_vec, s.rho_min, s.rho_max)

        rho_base = s.rho
        rho_vec = rho_vector(rho_base)

        def factor(rv: np.ndarray):
            K = Ps + s.sigma * np.eye(n)
            if m:
                K = K + Cs.T @ (rv[:, None] * Cs)
            return scipy.linalg.cho_factor(K, check_finite=False)

        kkt = factor(rho_vec)

        if warm_start is not None:
            w0 = np.asarray(warm_start[0], dtype=float).reshape(-1)
            y0 = np.asarray(warm_start[1], dtype=float).reshape(-1)
            if w0.shape[0] != n or y0.shape[0] != m:
                raise ValueError(
                    f"warm start shapes ({w0.shape[0]}, {y0.shape[0]}) do not match "
                    f"problem dims ({n}, {m})"
                )
            x = w0 / D
            y = cost * (y0 / np.where(E > 0, E, 1.0))
        else:
            x = np.zeros(n)
            y = np.zeros(m)
        z = Cs @ x if m else np.zeros(0)

        status = STATUS_MAX_ITERATIONS
        certificate = None
        iterations = s.max_iter

        for it in range(1, s.max_iter + 1):
            rhs = s.sigma * x - qs
            if m:
                rhs = rhs + Cs.T @ (rho_vec * z - y)
            x_tilde = scipy.linalg.cho_solve(kkt, rhs, check_finite=False)
            x_new = s.alpha * x_tilde + (1 - s.alpha) * x
            if m:
                z_tilde = Cs @ x_tilde
                z_relaxed = s.alpha * z_tilde + (1 - s.alpha) * z
                z_new = np.clip(z_relaxed + y / rho_vec, ls, us)
                y_new = y + rho_vec * (z_relaxed - z_new)
            else:
                z_new = z
                y_new = y
            delta_x = x_new - x
            delta_y = y_new - y
            x, z, y = x_new, z_new, y_new

            if it % s.check_interval == 0 or it == s.max_iter:
                w_orig = D * x
                y_orig = (E * y) / cost if m else np.zeros(0)
                z_orig = z / np.where(E > 0, E, 1.0) if m else np.zeros(0)
                Pw = problem.P @ w_orig
                Cw = C @ w_orig if m else np.zeros(0)
                r_prim = float(np.max(np.abs(Cw - z_orig), initial=0.0))
                station = Pw + problem.q + (C.T @ y_orig if m else 0.0)
                r_dual = float(np.max(np.abs(station), initial=0.0))
                eps_prim = s.eps_abs + s.eps_rel * max(
                    float(np.max(np.abs(Cw), initial=0.0)),
                    float(np.max(np.abs(z_orig), initial=0.0)),
                )
                eps_dual = s.eps_abs + s.eps_rel * max(
                    float(np.max(np.abs(Pw), initial=0.0)),
                    float(np.max(np.abs(C.T @ y_orig), initial=0.0)) if m else 0.0,
                    float(np.max(np.abs(problem.q), initial=0.0)),
                )
                if r_prim <= eps_prim and r_dual <= eps_dual:
                    status = STATUS_OPTIMAL
                    iterations = it
                    break

                if m and self._primal_infeasible(C, l, u, E, cost, delta_y, s.eps_pinf):
                    status = STATUS_INFEASIBLE
                    certificate = "primal"
                    iterations = it
                    break
                if self._dual_infeasible(problem, C, l, u, D, delta_x, s.eps_dinf):
                    status = STATUS_INFEASIBLE
                    certificate = "dual"
                    iterations = it
                    break

                if (
                    s.adaptive_rho
                    and it % s.adaptive_rho_interval == 0
                    and r_dual > 1e-12
                    and r_prim > 1e-12
                ):
                    scale_p = max(
                        float(np.max(np.abs(Cw), initial=0.0)),
                        float(np.max(np.abs(z_orig), initial=0.0)),
                        1e-10,
                    )
                    scale_d = max(
                        float(np.max(np.abs(Pw), initial=0.0)),
                        float(np.max(np.abs(C.T @ y_orig), initial=0.0)) if m else 0.0,
                        float(np.max(np.abs(problem.q), initial=0.0)),
                        1e-10,
                    )
                    ratio = np.sqrt((r_prim / scale_p) / (r_dual / scale_d))
                    if ratio > 5.0 or ratio < 0.2:
                        rho_base = float(np.clip(rho_base * ratio, s.rho_min, s.rho_max))
                        rho_vec = rho_vector(rho_base)
                        kkt = factor(rho_vec)

        w_orig = D * x
        y_orig = (E * y) / cost if m else np.zeros(0)

        polished = False
        if status == STATUS_OPTIMAL and s.polish and m:
            result = self._polish(problem, C, l, u, w_orig, y_orig)
            if result is not None:
                w_orig, y_orig = result
                polished = True

        residuals = kkt_residuals(problem, w_orig, y_orig)
        return QpSolution(
            w=w_orig,
            y=y_orig,
            status=status,
            iterations=iterations,
            solve_time=time.perf_counter() - t0,
            objective=problem.objective(w_orig),
            residuals=residuals,
            polished=polished,
            certificate=certificate,
        )

    @staticmethod
    def _primal_infeasible(C, l, u, E, cost, delta_y_scaled, eps) -> bool:
        delta_y = (E * delta_y_scaled) / cost
        norm = float(np.max(np.abs(delta_y), initial=0.0))
        if norm < 1e-14:
            return False
        dy = delta_y / norm
        if float(np.max(np.abs(C.T @ dy), initial=0.0)) > eps:
            return False
        dy_pos, dy_neg = np.maximum(dy, 0.0), np.minimum(dy, 0.0)
        # A positive multiplier direction on an absent bound cannot certify.
        if np.any(dy_pos[np.isinf(u)] > eps) or np.any(-dy_neg[np.isinf(l)] > eps):
            return False
        up_sel = dy_pos > eps
        lo_sel = -dy_neg > eps
        support = float(
            np.where(up_sel, u, 0.0) @ np.where(up_sel, dy_pos, 0.0)
            + np.where(lo_sel, l, 0.0) @ np.where(lo_sel, dy_neg, 0.0)
        )
        return support <= -eps

    @staticmethod
    def _dual_infeasible(problem, C, l, u, D, delta_x_scaled, eps) -> bool:
        delta_x = D * delta_x_scaled
        norm = float(np.max(np.abs(delta_x), initial=0.0))
        if norm < 1e-14:
            return False
        dx = delta_x / norm
        if float(np.max(np.abs(problem.P @ dx), initial=0.0)) > eps:
            return False
        if float(problem.q @ dx) > -eps:
            return False
        if C.shape[0]:
            c = C @ dx
            if np.any(c[np.isfinite(u)] > eps) or np.any(c[np.isfinite(l)] < -eps):
                return False
        return True

    @staticmethod
    def _polish(problem, C, l, u, w, y, delta: float = 1e-8):
        """Recover a high-accuracy solution from the active set implied by y.

        Solves the equality-constrained KKT system on the active rows with a
        small regularization plus iterative refinement; accepted only when it
        reduces the worst KKT residual.
        """
        n = problem.n
        eq_mask = np.isfinite(l) & np.isfinite(u) & (l == u)
        lower = (y < -1e-10) & np.isfinite(l) & ~eq_mask
        upper = (y > 1e-10) & np.isfinite(u) & ~eq_mask
        active = eq_mask | lower | upper
        idx = np.flatnonzero(active)
        G = C[idx]
        b = np.where(eq_mask | upper, u, l)[idx]
        na = idx.size
        K0 = np.zeros((n + na, n + na))
        K0[:n, :n] = problem.P
        if na:
            K0[:n, n:] = G.T
            K0[n:, :n] = G
        K = K0.copy()
        K[:n, :n] += delta * np.eye(n)
        if na:
            K[n:, n:] -= delta * np.eye(na)
        rhs = np.concatenate([-problem.q, b])
        try:
            lu_piv = scipy.linalg.lu_factor(K, check_finite=False)
        except (scipy.linalg.LinAlgError, ValueError):
            return None
        sol = scipy.linalg.lu_solve(lu_piv, rhs, check_finite=False)
        for _ in range(3):
            r = rhs - K0 @ sol
            sol = sol + scipy.linalg.lu_solve(lu_piv, r, check_finite=False)
        w_new = sol[:n]
        y_new = np.zeros_like(y)
        y_new[idx] = sol[n:]
        if not np.all(np.isfinite(w_new)) or not np.all(np.isfinite(y_new)):
            return None
        before = kkt_residuals(problem, w, y).max
        after = kkt_residuals(problem, w_new, y_new).max
        if after < before:
            return w_new, y_new
        return None


def solve_qp(
    problem: QpProblem,
    settings: QpSettings = QpSettings(),
    warm_start: tuple[np.ndarray, np.ndarray] | None = None,
) -> QpSolution:
    """One-shot convenience wrapper around AdmmQpSolver."""
    return AdmmQpSolver(settings).solve(problem, warm_start=warm_start)
