
from __future__ import annotations

import math

import numpy as np
import pytest
from sklearn.exceptions import NotFittedError

from conftest import fit_linear_model, linear_system_data, make_linear_system
from koopnav.koopman import (
    Default11Dictionary,
    DegenerateHeadingError,
    IdentityDictionary,
    IllConditionedFitError,
    KoopmanEdmdc,
    get_dictionary,
)
from koopnav.simulation import (
    Control,
    State,
    WaypointTrackingPolicy,
    collect_dataset,
    transitions_to_arrays,
)


def _reference_lift(x: float, y: float, theta: float) -> list[float]:
    """Entry-wise evaluation of the 11 observables, written independently."""
    c = math.cos(theta)
    s = math.sin(theta)
    return [x, y, c, s, s * c, c * c, x * c, x * s, y * c, y * s, 1.0]


def _fit_unicycle_model(ridge: float = 1e-8) -> KoopmanEdmdc:
    transitions = collect_dataset(WaypointTrackingPolicy(), episodes=10, steps=30, seed=321)
    X, U, X_next = transitions_to_arrays(transitions)
    return KoopmanEdmdc(ridge=ridge).fit(X, U, X_next)


def test_default11_lift_known_points() -> None:
    d = Default11Dictionary()
    assert np.allclose(
        d.lift(np.array([[0.0, 0.0, 0.0]]))[0],
        [0, 0, 1, 0, 0, 1, 0, 0, 0, 0, 1],
        atol=1e-15,
    )
    assert np.allclose(
        d.lift(np.array([[1.0, 2.0, math.pi / 2]]))[0],
        [1, 2, 0, 1, 0, 0, 0, 1, 0, 2, 1],
        atol=1e-15,
    )


def test_default11_lift_matches_reference_evaluator() -> None:
    d = Default11Dictionary()
    z = d.lift_one(State(0.3, -0.4, 0.7))
    assert np.allclose(z, _reference_lift(0.3, -0.4, 0.7), atol=1e-15)


def test_lift_rejects_wrong_shape() -> None:
    with pytest.raises(ValueError, match="expected"):
        Default11Dictionary().lift(np.zeros((3, 4)))


def test_decode_inverts_lift_across_workspace() -> None:
    d = Default11Dictionary()
    rng = np.random.default_rng(19)
    for _ in range(200):
        s = State(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-math.pi, math.pi))
        back = d.decode(d.lift_one(s))
        assert back.x == pytest.approx(s.x, abs=1e-12)
        assert back.y == pytest.approx(s.y, abs=1e-12)
        assert abs(math.remainder(back.theta - s.theta, 2 * math.pi)) < 1e-12


def test_decode_atan2_conventions() -> None:
    d = Default11Dictionary()
    z = np.zeros(11)
    z[0], z[1], z[2], z[3] = 1.0, 2.0, 0.6, 0.8
    s = d.decode(z)
    assert (s.x, s.y) == (1.0, 2.0)
    assert s.theta == pytest.approx(math.atan2(0.8, 0.6))
    # atan2 ignores the magnitude of the heading observables.
    z[2], z[3] = 2.0, 0.0
    assert d.decode(z).theta == 0.0


def test_decode_degenerate_heading_raises() -> None:
    z = np.zeros(11)
    with pytest.raises(DegenerateHeadingError):
        Default11Dictionary().decode(z)
    with pytest.raises(ValueError, match="length"):
        Default11Dictionary().decode(np.zeros(7))


def test_identity_dictionary_round_trip() -> None:
    d = IdentityDictionary(3)
    v = np.array([1.0, -2.0, 0.5])
    assert np.array_equal(d.decode(d.lift(v.reshape(1, 3))[0]), v)
    proj = d.position_projection()
    assert proj.shape == (2, 3)
    assert np.array_equal(proj @ v, v[:2])
    with pytest.raises(ValueError):
        IdentityDictionary(0)


def test_get_dictionary_registry() -> None:
    assert isinstance(get_dictionary("default11"), Default11Dictionary)
    assert get_dictionary("identity", dim=4).p == 4
    with pytest.raises(KeyError, match="unknown dictionary"):
        get_dictionary("fourier99")


def test_position_projection_extracts_xy() -> None:
    d = Default11Dictionary()
    z = d.lift_one(State(0.7, -1.1, 0.4))
    assert np.allclose(d.position_projection() @ z, [0.7, -1.1])


def test_exact_recovery_on_linear_system() -> None:
    rng = np.random.default_rng(100)
    A0, B0 = make_linear_system(rng, n=3, m=2)
    model = fit_linear_model(rng, A0, B0, M=500, ridge=0.0)
    assert np.allclose(model.A_, A0, atol=1e-8)
    assert np.allclose(model.B_, B0, atol=1e-8)
    X, U, X_next = linear_system_data(rng, A0, B0, 200)
    pred = model.predict(X, U)
    assert float(np.max(np.abs(pred - X_next))) <= 1e-8


def test_fit_requires_enough_samples() -> None:
    X = np.zeros((5, 3))
    U = np.zeros((5, 2))
    with pytest.raises(ValueError, match="at least"):
        KoopmanEdmdc().fit(X, U, X)


def test_fit_rejects_mismatched_counts_and_negative_ridge() -> None:
    X = np.zeros((20, 3))
    with pytest.raises(ValueError, match="disagree"):
        KoopmanEdmdc().fit(X, np.zeros((19, 2)), X)
    with pytest.raises(ValueError, match="ridge"):
        KoopmanEdmdc(ridge=-1e-9).fit(X, np.zeros((20, 2)), X)


def test_rank_deficient_control_block_named_in_error() -> None:
    rng = np.random.default_rng(4)
    X = rng.normal(size=(30, 2))
    U = np.zeros((30, 1))
    X_next = rng.normal(size=(30, 2))
    model = KoopmanEdmdc(dictionary=IdentityDictionary(2), ridge=0.0)
    with pytest.raises(IllConditionedFitError, match="control block U"):
        model.fit(X, U, X_next)


def test_rank_deficient_state_block_named_in_error() -> None:
    rng = np.random.default_rng(4)
    X = np.ones((30, 2))
    U = rng.normal(size=(30, 1))
    X_next = rng.normal(size=(30, 2))
    model = KoopmanEdmdc(dictionary=IdentityDictionary(2), ridge=0.0)
    with pytest.raises(IllConditionedFitError, match="lifted-state block Z"):
        model.fit(X, U, X_next)


def test_ridge_rescues_deficient_fit() -> None:
    rng = np.random.default_rng(4)
    X = rng.normal(size=(30, 2))
    U = np.zeros((30, 1))
    X_next = rng.normal(size=(30, 2))
    model = KoopmanEdmdc(dictionary=IdentityDictionary(2), ridge=1e-6)
    model.fit(X, U, X_next)
    assert np.all(np.isfinite(model.A_))


def test_unicycle_residual_strictly_positive() -> None:
    # The lifted linear class cannot capture the v*cos(theta) bilinearity.
    model = _fit_unicycle_model()
    assert model.residual_rms_ > 0.0
    assert model.condition_number_ > 1.0
    assert model.n_samples_ == 300
    assert model.p_ == 11


def test_ridge_monotonicity_of_training_residual() -> None:
    transitions = collect_dataset(WaypointTrackingPolicy(), episodes=8, steps=25, seed=77)
    X, U, X_next = transitions_to_arrays(transitions)
    residuals = []
    for ridge in (0.0, 1e-8, 1e-4, 1e-1, 10.0):
        residuals.append(KoopmanEdmdc(ridge=ridge).fit(X, U, X_next).residual_rms_)
    for smaller, larger in zip(residuals, residuals[1:]):
        assert larger >= smaller - 1e-12


def test_predict_requires_fit() -> None:
    model = KoopmanEdmdc()
    with pytest.raises(NotFittedError):
        model.predict_one_step(State(0, 0, 0), Control(0.1, 0.0))


def test_predict_one_step_linear_system_matches_truth() -> None:
    rng = np.random.default_rng(8)
    A0, B0 = make_linear_system(rng, n=2, m=1)
    model = fit_linear_model(rng, A0, B0)
    x = rng.normal(size=2)
    u = rng.normal(size=1)
    truth = A0 @ x + B0 @ u
    pred = model.predict_lifted(model.lift(x.reshape(1, 2))[0], u)
    assert np.allclose(pred, truth, atol=1e-8)


def test_zero_model_decodes_to_degenerate_heading() -> None:
    model = _fit_unicycle_model()
    model.A_ = np.zeros_like(model.A_)
    model.B_ = np.zeros_like(model.B_)
    with pytest.raises(DegenerateHeadingError):
        model.predict_one_step(State(0.5, 0.5, 0.2), Control(0.3, 0.1))


def test_rollout_lifted_propagation_identity() -> None:
    model = _fit_unicycle_model()
    rng = np.random.default_rng(23)
    controls = rng.uniform(-1, 1, size=(10, 2))
    traj = model.rollout(State(0.1, -0.2, 0.3), controls)
    assert traj.shape == (11, 11)
    for i, u in enumerate(controls):
        residual = traj[i + 1] - (model.A_ @ traj[i] + model.B_ @ u)
        assert float(np.max(np.abs(residual))) == 0.0


def test_rollout_edge_cases() -> None:
    model = _fit_unicycle_model()
    state = State(0.1, -0.2, 0.3)
    empty = model.rollout(state, [])
    assert empty.shape == (1, 11)
    assert np.array_equal(empty[0], model.lift(state.as_array().reshape(1, 3))[0])
    one = model.rollout(state, np.array([[0.4, 0.1]]))
    stepped = model.predict_one_step(state, Control(0.4, 0.1))
    decoded = model.decode(one[1])
    assert (decoded.x, decoded.y, decoded.theta) == (stepped.x, stepped.y, stepped.theta)


def test_rollout_linear_system_matches_ground_truth() -> None:
    rng = np.random.default_rng(31)
    A0, B0 = make_linear_system(rng, n=2, m=2)
    model = fit_linear_model(rng, A0, B0)
    controls = rng.normal(size=(10, 2))
    x = np.array([0.4, -0.7])
    traj = model.rollout(x, controls)
    truth = x.copy()
    for i, u in enumerate(controls):
        truth = A0 @ truth + B0 @ u
        assert np.allclose(traj[i + 1], truth, atol=1e-6)


def test_model_json_round_trip_is_bit_exact() -> None:
    model = _fit_unicycle_model()
    text = model.to_json()
    back = KoopmanEdmdc.from_json(text)
    assert np.array_equal(back.A_, model.A_)
    assert np.array_equal(back.B_, model.B_)
    assert back.residual_rms_ == model.residual_rms_
    assert back.condition_number_ == model.condition_number_
    assert back.n_samples_ == model.n_samples_
    assert back.to_json() == text


def test_model_json_round_trip_identity_dictionary() -> None:
    rng = np.random.default_rng(55)
    A0, B0 = make_linear_system(rng, n=2, m=1)
    model = fit_linear_model(rng, A0, B0)
    back = KoopmanEdmdc.from_json(model.to_json())
    assert isinstance(back.dictionary_, IdentityDictionary)
    assert back.dictionary_.p == 2
    assert np.array_equal(back.A_, model.A_)


def test_model_json_rejects_wrong_schema() -> None:
    model = _fit_unicycle_model()
    text = model.to_json().replace("koopnav-model-v1", "koopnav-model-v0")
    with pytest.raises(ValueError, match="schema"):
        KoopmanEdmdc.from_json(text)
