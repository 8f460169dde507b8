"""Lifted linear surrogate identification for the unicycle.

A dictionary of observables lifts the 3-dimensional pose into a higher
dimensional space where one-step dynamics are approximated by a linear map
z+ = A z + B u, fitted from data by ridge-regularized least squares.
"""

from __future__ import annotations

import json
import math

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .simulation import Control, State

SERIALIZATION_SCHEMA = "koopnav-model-v1"


class DegenerateHeadingError(ValueError):
    """Decoding failed because the heading observables are both (near) zero."""


class IllConditionedFitError(ValueError):
    """The unregularized normal equations are numerically rank-deficient."""


class LiftingDictionary:
    """Fixed set of observables mapping pose (x, y, theta) to R^p.

    The first two observables must be the plain coordinates x and y so that
    position is a linear readout of the lifted state; planar constraints can
    then act on the lifted vector through a constant projection.
    """

    name: str = "base"
    p: int = 0
    state_dim: int = 3

    def lift(self, states: np.ndarray) -> np.ndarray:
        """Map an (M, 3) array of poses (or a single pose) to (M, p)."""
        raise NotImplementedError

    def lift_one(self, state: State) -> np.ndarray:
        return self.lift(state.as_array().reshape(1, 3))[0]

    def decode(self, z: np.ndarray) -> State:
        raise NotImplementedError

    def position_projection(self) -> np.ndarray:
        """(2, p) matrix extracting (x, y) from the lifted vector."""
        proj = np.zeros((2, self.p))
        proj[0, 0] = 1.0
        proj[1, 1] = 1.0
        return proj


class Default11Dictionary(LiftingDictionary):
    """Eleven observables: coordinates, heading trig, their products, and a bias.

    z = (x, y, cos t, sin t, sin t cos t, cos^2 t, x cos t, x sin t,
         y cos t, y sin t, 1)
    """

    name = "default11"
    p = 11

    def lift(self, states: np.ndarray) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=float))
        if states.shape[1] != 3:
            raise ValueError(f"expected (M, 3) pose array, got shape {states.shape}")
        x, y, t = states[:, 0], states[:, 1], states[:, 2]
        c, s = np.cos(t), np.sin(t)
        return np.column_stack([x, y, c, s, s * c, c * c, x * c, x * s, y * c, y * s, np.ones_like(x)])

    def decode(self, z: np.ndarray, tol: float = 1e-9) -> State:
        z = np.asarray(z, dtype=float).reshape(-1)
        if z.shape[0] != self.p:
            raise ValueError(f"expected lifted vector of length {self.p}, got {z.shape[0]}")
        c, s = z[2], z[3]
        if math.hypot(c, s) < tol:
            raise DegenerateHeadingError(
                f"heading observables (cos, sin) = ({c:.3e}, {s:.3e}) have norm "
                f"below {tol:.1e}; heading is unrecoverable"
            )
        return State(z[0], z[1], math.atan2(s, c))


class IdentityDictionary(LiftingDictionary):
    """Identity lift for an n-dimensional linear state; used by recovery tests.

    Positions are taken to be the first min(2, n) coordinates.
    """

    name = "identity"

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.p = dim
        self.state_dim = dim

    def lift(self, states: np.ndarray) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=float))
        if states.shape[1] != self.state_dim:
            raise ValueError(f"expected (M, {self.state_dim}) array, got shape {states.shape}")
        return states.copy()

    def decode(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=float).reshape(-1).copy()

    def position_projection(self) -> np.ndarray:
        proj = np.zeros((2, self.p))
        for i in range(min(2, self.p)):
            proj[i, i] = 1.0
        return proj


_DICTIONARIES = {
    "default11": Default11Dictionary,
}


def get_dictionary(name: str, **kwargs) -> LiftingDictionary:
    """Instantiate a registered dictionary by name ("identity" takes dim=...)."""
    if name == "identity":
        return IdentityDictionary(**kwargs)
    if name not in _DICTIONARIES:
        raise KeyError(f"unknown dictionary {name!r}; known: {sorted(_DICTIONARIES) + ['identity']}")
    return _DICTIONARIES[name](**kwargs)


class KoopmanEdmdc(BaseEstimator):
    """Lifted linear model z+ = A z + B u fitted by regularized least squares.

    Parameters
    ----------
    dictionary : str or LiftingDictionary, default "default11"
        Observable set used to lift the state.
    ridge : float, default 1e-8
        Tikhonov weight on the stacked [A B] coefficients.  Zero is allowed
        only when the regressor matrix has full column rank.

    Attributes
    ----------
    A_ : ndarray of shape (p, p)
        Lifted state-transition matrix.
    B_ : ndarray of shape (p, m)
        Lifted input matrix.
    residual_rms_ : float
        Root-mean-square one-step residual over the training set, in the
        lifted space.
    condition_number_ : float
        Condition number of the regressor Gram matrix before regularization.
    n_samples_ : int
        Number of training transitions.
    """

    def __init__(self, dictionary="default11", ridge: float = 1e-8):
        self.dictionary = dictionary
        self.ridge = ridge

    def _resolve_dictionary(self) -> LiftingDictionary:
        if isinstance(self.dictionary, LiftingDictionary):
            return self.dictionary
        return get_dictionary(self.dictionary)

    def fit(self, X: np.ndarray, U: np.ndarray, X_next: np.ndarray) -> "KoopmanEdmdc":
        """Fit A and B from M transitions (X[i], U[i]) -> X_next[i].

        X and X_next have shape (M, state_dim); U has shape (M, m).
        """
        if self.ridge < 0:
            raise ValueError(f"ridge must be >= 0, got {self.ridge}")
        dictionary = self._resolve_dictionary()
        X = np.atleast_2d(np.asarray(X, dtype=float))
        U = np.atleast_2d(np.asarray(U, dtype=float))
        X_next = np.atleast_2d(np.asarray(X_next, dtype=float))
        if not (X.shape[0] == U.shape[0] == X_next.shape[0]):
            raise ValueError(
                f"sample counts disagree: X has {X.shape[0]}, U has {U.shape[0]}, "
                f"X_next has {X_next.shape[0]}"
            )
        M, m = U.shape
        Z = dictionary.lift(X)
        Z_next = dictionary.lift(X_next)
        p = Z.shape[1]
        if M < p + m:
            raise ValueError(
                f"need at least p + m = {p + m} transitions to identify "
                f"[A B], got {M}"
            )
        # Stacked regression: Z_next ~ G K with G = [Z U], K = [A B]^T.
        G = np.hstack([Z, U])
        gram = G.T @ G
        self.condition_number_ = float(np.linalg.cond(gram))
        if self.ridge == 0 and self.condition_number_ > 1e12:
            # Identify which block drives the deficiency for the error message.
            blocks = []
            if np.linalg.matrix_rank(Z, tol=1e-10 * max(1.0, float(np.abs(Z).max()))) < p:
                blocks.append("lifted-state block Z")
            if np.linalg.matrix_rank(U, tol=1e-10 * max(1.0, float(np.abs(U).max()) or 1.0)) < m:
                blocks.append("control block U")
            culprit = " and ".join(blocks) if blocks else "stacked regressor [Z U]"
            raise IllConditionedFitError(
                f"normal equations are ill-conditioned (cond {self.condition_number_:.2e}) "
                f"with ridge=0; deficient part: {culprit}. Increase ridge or enrich the data."
            )
        K = np.linalg.solve(gram + self.ridge * np.eye(p + m), G.T @ Z_next)
        self.A_ = K[:p, :].T.copy()
        self.B_ = K[p:, :].T.copy()
        residual = Z_next - G @ K
        self.residual_rms_ = float(np.sqrt(np.mean(residual**2)))
        self.n_samples_ = M
        self.dictionary_ = dictionary
        return self

    def _check_fitted(self):
        if not hasattr(self, "A_"):
            raise NotFittedError("model is not fitted; call fit(X, U, X_next) first")

    @property
    def p_(self) -> int:
        self._check_fitted()
        return self.A_.shape[0]

    def lift(self, states: np.ndarray) -> np.ndarray:
        return self._resolve_dictionary().lift(states)

    def decode(self, z: np.ndarray):
        return self._resolve_dictionary().decode(z)

    def predict_lifted(self, z: np.ndarray, u: np.ndarray) -> np.ndarray:
        """One step in the lifted space: A z + B u."""
        self._check_fitted()
        return self.A_ @ np.asarray(z, dtype=float) + self.B_ @ np.asarray(u, dtype=float)

    def predict_one_step(self, state: State, control: Control) -> State:
        """Lift, advance one step linearly, decode back to a pose."""
        self._check_fitted()
        z = self.dictionary_.lift_one(state)
        z_next = self.predict_lifted(z, control.as_array())
        return self.dictionary_.decode(z_next)

    def predict(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        """Vectorized one-step prediction; rows of X and U are paired samples."""
        self._check_fitted()
        Z = self.dictionary_.lift(np.atleast_2d(X))
        U = np.atleast_2d(np.asarray(U, dtype=float))
        Z_next = Z @ self.A_.T + U @ self.B_.T
        decoded = [self.dictionary_.decode(z) for z in Z_next]
        if isinstance(decoded[0], State):
            return np.array([d.as_array() for d in decoded])
        return np.array(decoded)

    def rollout(self, state: State | np.ndarray, controls: np.ndarray) -> np.ndarray:
        """Propagate the lifted model open-loop under a control sequence.

        The initial state (a pose, or a raw state vector for non-pose
        dictionaries) is lifted once; all subsequent steps stay in the lifted
        space.  Returns an (N+1, p) array of lifted states including the
        initial lift.
        """
        self._check_fitted()
        controls = np.asarray(controls, dtype=float)
        if controls.size == 0:
            controls = controls.reshape(0, self.B_.shape[1])
        controls = np.atleast_2d(controls)
        if isinstance(state, State):
            z = self.dictionary_.lift_one(state)
        else:
            z = self.dictionary_.lift(np.atleast_2d(np.asarray(state, dtype=float)))[0]
        out = np.empty((controls.shape[0] + 1, z.shape[0]))
        out[0] = z
        for i, u in enumerate(controls):
            z = self.predict_lifted(z, u)
            out[i + 1] = z
        return out

    # -- serialization ------------------------------------------------------

    def to_json(self) -> str:
        """Serialize the fitted model; numeric entries round-trip bit-exact."""
        self._check_fitted()
        if isinstance(self.dictionary_, IdentityDictionary):
            dict_spec = {"name": "identity", "dim": self.dictionary_.p}
        else:
            dict_spec = {"name": self.dictionary_.name}
        payload = {
            "schema": SERIALIZATION_SCHEMA,
            "dictionary": dict_spec,
            "ridge": self.ridge,
            "A": [[a.hex() for a in row] for row in self.A_.tolist()],
            "B": [[b.hex() for b in row] for row in self.B_.tolist()],
            "residual_rms": self.residual_rms_.hex(),
            "condition_number": self.condition_number_.hex(),
            "n_samples": self.n_samples_,
        }
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "KoopmanEdmdc":
        payload = json.loads(text)
        schema = payload.get("schema")
        if schema != SERIALIZATION_SCHEMA:
            raise ValueError(
                f"unsupported model schema {schema!r}; expected {SERIALIZATION_SCHEMA!r}"
            )
        dict_spec = payload["dictionary"]
        if dict_spec["name"] == "identity":
            dictionary = IdentityDictionary(dict_spec["dim"])
        else:
            dictionary = get_dictionary(dict_spec["name"])
        model = cls(dictionary=dictionary, ridge=payload["ridge"])
        model.A_ = np.array([[float.fromhex(a) for a in row] for row in payload["A"]])
        model.B_ = np.array([[float.fromhex(b) for b in row] for row in payload["B"]])
        model.residual_rms_ = float.fromhex(payload["residual_rms"])
        model.condition_number_ = float.fromhex(payload["condition_number"])
        model.n_samples_ = payload["n_samples"]
        model.dictionary_ = dictionary
        return model
