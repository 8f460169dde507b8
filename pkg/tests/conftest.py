
from __future__ import annotations

import itertools

import numpy as np
import pytest

from koopnav.koopman import IdentityDictionary, KoopmanEdmdc
from koopnav.pipeline import OfflineArtifacts, offline_phase
from koopnav.qp import QpProblem


@pytest.fixture(scope="session")
def artifacts() -> OfflineArtifacts:
    """Default offline model + calibration, shared by every suite that needs one."""
    return offline_phase()


def make_linear_system(rng: np.random.Generator, n: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Random stable discrete-time pair (A0, B0) with spectral radius <= 0.95."""
    A0 = rng.normal(size=(n, n))
    radius = max(abs(np.linalg.eigvals(A0)))
    A0 = A0 * (0.95 / radius) if radius > 0.95 else A0
    B0 = rng.normal(size=(n, m))
    return A0, B0


def linear_system_data(
    rng: np.random.Generator, A0: np.ndarray, B0: np.ndarray, M: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n, m = B0.shape
    X = rng.normal(size=(M, n))
    U = rng.normal(size=(M, m))
    X_next = X @ A0.T + U @ B0.T
    return X, U, X_next


def fit_linear_model(
    rng: np.random.Generator, A0: np.ndarray, B0: np.ndarray, M: int = 500, ridge: float = 0.0
) -> KoopmanEdmdc:
    X, U, X_next = linear_system_data(rng, A0, B0, M)
    model = KoopmanEdmdc(dictionary=IdentityDictionary(A0.shape[0]), ridge=ridge)
    return model.fit(X, U, X_next)


def random_feasible_qp(rng: np.random.Generator) -> QpProblem:
    """Strictly convex QP with one-sided rows, feasible by construction."""
    d = int(rng.integers(1, 5))
    m = int(rng.integers(1, 7))
    M = rng.normal(size=(d, d))
    P = M @ M.T + 0.5 * np.eye(d)
    q = rng.normal(size=d)
    G = rng.normal(size=(m, d))
    w0 = rng.normal(size=d)
    u = G @ w0 + np.abs(rng.normal(size=m))
    return QpProblem(P=P, q=q, A_in=G, l_in=np.full(m, -np.inf), u_in=u)


def active_set_optimum(problem: QpProblem) -> float:
    """Exhaustive active-set enumeration over the inequality rows.

    Solves the KKT equality system for every subset, keeps primal- and
    dual-feasible candidates, and returns the best objective found.
    """
    P, q = problem.P, problem.q
    G, u = problem.A_in, problem.u_in
    n = problem.n
    m = G.shape[0]
    best = np.inf
    for r in range(m + 1):
        for subset in itertools.combinations(range(m), r):
            idx = list(subset)
            na = len(idx)
            K = np.zeros((n + na, n + na))
            K[:n, :n] = P
            if na:
                K[:n, n:] = G[idx].T
                K[n:, :n] = G[idx]
            rhs = np.concatenate([-q, u[idx]])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            w = sol[:n]
            lam = sol[n:]
            if na and (not np.allclose(G[idx] @ w, u[idx], atol=1e-8)):
                continue
            if np.any(G @ w > u + 1e-9):
                continue
            if np.any(lam < -1e-8):
                continue
            best = min(best, problem.objective(w))
    return best
