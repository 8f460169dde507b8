"""Split conformal calibration of one-step position prediction error.

Nonconformity is the Euclidean position error of the one-step model
prediction.  The calibration quantile at level 1 - alpha is the k-th
smallest element of the scores augmented with an infinity atom, with
k = ceil((n + 1)(1 - alpha)).  Rank arithmetic is done in exact rationals
so boundary cases never fall to floating-point rounding.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .koopman import KoopmanEdmdc
from .simulation import (
    Transition,
    collect_dataset,
    transitions_to_arrays,
)

SCORES_SCHEMA = "koopnav-scores-v1"


class InfiniteQuantileError(ValueError):
    """A finite margin was requested but the calibration quantile is infinite."""


@dataclass(frozen=True)
class ScoreSet:
    """Nonconformity scores from a calibration split."""

    scores: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=float).reshape(-1)
        if scores.size == 0:
            raise ValueError("score set must be nonempty")
        if not np.all(np.isfinite(scores)):
            raise ValueError("scores must be finite")
        if np.any(scores < 0):
            raise ValueError("scores must be nonnegative")
        object.__setattr__(self, "scores", scores)

    @property
    def n(self) -> int:
        return int(self.scores.size)


@dataclass(frozen=True)
class Quantile:
    """Conformal quantile with a typed infinity sentinel.

    value is None exactly when the quantile is the infinity atom, i.e. the
    requested rank exceeds the number of finite scores.  rank is 1-based
    within the augmented multiset scores + {infinity}.
    """

    value: float | None
    rank: int
    n: int

    @property
    def is_infinite(self) -> bool:
        return self.value is None

    def require_finite(self, context: str = "margin computation") -> float:
        if self.value is None:
            raise InfiniteQuantileError(
                f"calibration quantile is infinite (rank {self.rank} of "
                f"{self.n} finite scores); {context} needs a finite quantile. "
                f"Collect more calibration data or lower the confidence level."
            )
        return self.value


def _check_alpha(alpha: float):
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")


def _exact_level(alpha: float) -> Fraction:
    """1 - alpha as an exact rational read from the decimal repr of alpha."""
    return 1 - Fraction(str(float(alpha)))


def conformal_quantile(score_set: ScoreSet, alpha: float) -> Quantile:
    """Rank-based 1 - alpha quantile over scores augmented with infinity.

    k = ceil((n + 1)(1 - alpha)); if k > n the quantile is the infinity atom
    and the returned Quantile has value None.  The rank is computed in exact
    rational arithmetic so that, e.g., n = 9, alpha = 0.1 yields k = 9 rather
    than falling to the infinity atom through float rounding.
    """
    _check_alpha(alpha)
    n = score_set.n
    k = math.ceil(Fraction(n + 1) * _exact_level(alpha))
    if k > n:
        return Quantile(value=None, rank=k, n=n)
    ordered = np.sort(score_set.scores)
    return Quantile(value=float(ordered[k - 1]), rank=k, n=n)


def weighted_quantile(score_set: ScoreSet, weights: np.ndarray, alpha: float) -> Quantile:
    """Quantile of the weighted score distribution with an infinity atom.

    weights has length n + 1; the last weight sits on the infinity atom.
    Weights must be nonnegative and sum to 1 within 1e-9.  The quantile is
    the smallest score s with cumulative weight of {scores <= s} at least
    1 - alpha; if only the infinity atom reaches that mass the result is
    infinite.  Weights are renormalized by their exact rational total, so
    uniform weights float(1/(n+1)) reproduce the unweighted quantile exactly.
    """
    _check_alpha(alpha)
    n = score_set.n
    weights = np.asarray(weights, dtype=float).reshape(-1)
    if weights.size != n + 1:
        raise ValueError(f"expected {n + 1} weights (scores + infinity atom), got {weights.size}")
    if np.any(weights < 0):
        raise ValueError("weights must be nonnegative")
    exact = [Fraction(float(w)) for w in weights]
    total = sum(exact)
    if abs(float(total) - 1.0) > 1e-9:
        raise ValueError(f"weights must sum to 1 (got {float(total)!r})")
    normalized = [w / total for w in exact]
    order = np.argsort(score_set.scores, kind="stable")
    target = _exact_level(alpha)
    cumulative = Fraction(0)
    for position, idx in enumerate(order):
        cumulative += normalized[int(idx)]
        if cumulative >= target:
            return Quantile(value=float(score_set.scores[int(idx)]), rank=position + 1, n=n)
    return Quantile(value=None, rank=n + 1, n=n)


def tightening_margin(quantile: Quantile, lipschitz: float = 1.0, epsilon: float = 0.01) -> float:
    """Constraint tightening L * Q + eps; raises if the quantile is infinite."""
    if lipschitz < 0:
        raise ValueError(f"lipschitz must be >= 0, got {lipschitz}")
    if epsilon < 0:
        raise ValueError(f"epsilon must be >= 0, got {epsilon}")
    return lipschitz * quantile.require_finite("constraint tightening") + epsilon


def empirical_coverage(score_set: ScoreSet, quantile: Quantile) -> float:
    """Fraction of scores at or below the quantile (1.0 for the infinite atom)."""
    if quantile.is_infinite:
        return 1.0
    return float(np.mean(score_set.scores <= quantile.value))


# ---------------------------------------------------------------------------
# Calibration data collection


@dataclass(frozen=True)
class CalibrationPair:
    """One calibration event: observed next pose vs. model prediction."""

    index: int
    true_next: np.ndarray  # (3,) pose
    predicted_next: np.ndarray  # (3,) pose
    score: float


def nonconformity_scores(
    model: KoopmanEdmdc, transitions: list[Transition]
) -> ScoreSet:
    """Position-only Euclidean one-step errors of the model on held-out transitions."""
    if not transitions:
        raise ValueError("need at least one calibration transition")
    X, U, X_next = transitions_to_arrays(transitions)
    predicted = model.predict(X, U)
    errors = np.linalg.norm(predicted[:, :2] - X_next[:, :2], axis=1)
    return ScoreSet(errors)


def collect_calibration_pairs(
    model: KoopmanEdmdc, transitions: list[Transition]
) -> list[CalibrationPair]:
    """Per-transition calibration records with provenance indices."""
    X, U, X_next = transitions_to_arrays(transitions)
    predicted = model.predict(X, U)
    pairs = []
    for i in range(len(transitions)):
        score = float(np.linalg.norm(predicted[i, :2] - X_next[i, :2]))
        pairs.append(CalibrationPair(i, X_next[i].copy(), predicted[i].copy(), score))
    return pairs


@dataclass(frozen=True)
class CalibrationResult:
    """Everything the online phase needs from calibration."""

    alpha: float
    quantile: Quantile
    scores: ScoreSet
    lipschitz: float = 1.0
    epsilon: float = 0.01

    @property
    def n(self) -> int:
        return self.scores.n

    @property
    def margin(self) -> float:
        return tightening_margin(self.quantile, self.lipschitz, self.epsilon)

    def margin_at(self, alpha: float) -> float:
        """Re-derive the margin for a different confidence level from the same scores."""
        return tightening_margin(
            conformal_quantile(self.scores, alpha), self.lipschitz, self.epsilon
        )


def calibrate(
    model: KoopmanEdmdc,
    transitions: list[Transition],
    alpha: float,
    lipschitz: float = 1.0,
    epsilon: float = 0.01,
) -> CalibrationResult:
    """Score held-out transitions and form the 1 - alpha calibration quantile."""
    scores = nonconformity_scores(model, transitions)
    quantile = conformal_quantile(scores, alpha)
    return CalibrationResult(alpha, quantile, scores, lipschitz, epsilon)


# ---------------------------------------------------------------------------
# Persistence

CALIBRATION_SCHEMA = "koopnav-calibration-v1"


def calibration_to_json(result: CalibrationResult, extra_metadata: dict | None = None) -> str:
    """Serialize a calibration result; scores round-trip bit-exact via hex."""
    payload = {
        "schema": CALIBRATION_SCHEMA,
        "alpha": result.alpha,
        "epsilon": result.epsilon,
        "lipschitz": result.lipschitz,
        "n": result.n,
        "quantile": {
            "value": None if result.quantile.is_infinite else result.quantile.value.hex(),
            "rank": result.quantile.rank,
            "infinite": result.quantile.is_infinite,
        },
        "margin": None if result.quantile.is_infinite else result.margin,
        "scores": [s.hex() for s in result.scores.scores.tolist()],
    }
    if extra_metadata:
        payload["metadata"] = extra_metadata
    return json.dumps(payload, indent=2)


def calibration_from_json(text: str) -> CalibrationResult:
    payload = json.loads(text)
    schema = payload.get("schema")
    if schema != CALIBRATION_SCHEMA:
        raise ValueError(
            f"unsupported calibration schema {schema!r}; expected {CALIBRATION_SCHEMA!r}"
        )
    scores = ScoreSet(np.array([float.fromhex(s) for s in payload["scores"]]))
    result = CalibrationResult(
        alpha=payload["alpha"],
        quantile=conformal_quantile(scores, payload["alpha"]),
        scores=scores,
        lipschitz=payload["lipschitz"],
        epsilon=payload["epsilon"],
    )
    stored_rank = payload["quantile"]["rank"]
    if result.quantile.rank != stored_rank:
        raise ValueError(
            f"calibration artifact is inconsistent: stored quantile rank "
            f"{stored_rank} but recomputed {result.quantile.rank}"
        )
    return result


_SCORE_COLUMNS = [
    "pair",
    "true_x",
    "true_y",
    "true_theta",
    "pred_x",
    "pred_y",
    "pred_theta",
    "score",
]


def pairs_to_csv(pairs: list[CalibrationPair]) -> str:
    """CSV of calibration pairs with full-precision floats."""
    buf = io.StringIO()
    buf.write(f"# schema={SCORES_SCHEMA}\n")
    writer = csv.writer(buf)
    writer.writerow(_SCORE_COLUMNS)
    for pair in pairs:
        writer.writerow(
            [pair.index]
            + [repr(float(v)) for v in pair.true_next]
            + [repr(float(v)) for v in pair.predicted_next]
            + [repr(pair.score)]
        )
    return buf.getvalue()


def pairs_from_csv(text: str) -> list[CalibrationPair]:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# schema="):
        raise ValueError("missing schema comment line in calibration CSV")
    schema = lines[0].split("=", 1)[1]
    if schema != SCORES_SCHEMA:
        raise ValueError(f"unsupported score schema {schema!r}; expected {SCORES_SCHEMA!r}")
    reader = csv.reader(lines[1:])
    header = next(reader)
    if header != _SCORE_COLUMNS:
        missing = [c for c in _SCORE_COLUMNS if c not in header]
        raise ValueError(f"calibration CSV missing columns: {missing}")
    pairs = []
    for row in reader:
        if not row:
            continue
        pairs.append(
            CalibrationPair(
                int(row[0]),
                np.array([float(row[1]), float(row[2]), float(row[3])]),
                np.array([float(row[4]), float(row[5]), float(row[6])]),
                float(row[7]),
            )
        )
    return pairs
