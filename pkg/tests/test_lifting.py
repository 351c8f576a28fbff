import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybrid_ncd import lifting as L
from hybrid_ncd.errors import DimensionError, DivergenceError, NumericalRankError, ParameterError


def poly2():
    return L.BasisSpec(2, (L.identity(0), L.identity(1), L.product(0, 0), L.product(1, 1)))


def test_lift_polynomial_terms():
    np.testing.assert_array_equal(L.lift([1, 2], poly2()), [1, 2, 1, 4])


def test_lift_zero_state_is_zero_without_constant():
    basis = L.make_basis(3, quadratic=True, cubic=True)
    assert not np.any(L.lift(np.zeros(3), basis))


def test_lift_sin_term():
    basis = L.BasisSpec(1, (L.identity(0), L.sin(0, 1.0)))
    np.testing.assert_allclose(L.lift([math.pi / 2], basis), [math.pi / 2, 1.0])


def test_lift_all_kinds_match_scalar_definitions():
    basis = L.BasisSpec(
        2,
        (L.identity(0), L.identity(1), L.product(1, 0), L.cube(1), L.sin(0, 2.0), L.cos(1, 0.5), L.constant()),
    )
    x = np.array([0.3, -1.7])
    expect = [0.3, -1.7, 0.3 * -1.7, (-1.7) ** 3, math.sin(0.6), math.cos(-0.85), 1.0]
    np.testing.assert_allclose(basis.lift(x), expect, rtol=0, atol=1e-15)
    # batch evaluation agrees row by row
    X = np.array([x, -x, 2 * x])
    np.testing.assert_array_equal(basis.lift(X)[1], basis.lift(-x))


def test_lift_rejects_wrong_dimension():
    with pytest.raises(DimensionError):
        L.lift([1.0, 2.0, 3.0], poly2())


def test_basis_invariants():
    with pytest.raises(ParameterError):
        L.BasisSpec(2, (L.identity(1), L.identity(0)))
    with pytest.raises(ParameterError):
        L.BasisSpec(2, (L.identity(0), L.identity(1), L.product(0, 1), L.product(1, 0)))
    with pytest.raises(ParameterError):
        L.BasisSpec(2, (L.identity(0), L.identity(1), L.cube(2)))
    with pytest.raises(ParameterError):
        L.Term("quartic", 0)


def test_basis_roundtrip_text():
    basis = L.make_basis(3, quadratic=[0, 2], cubic=True, trig=[1.0, 2.5], trig_channels=[1], constant_term=True)
    again = L.BasisSpec.from_json(basis.to_json())
    assert again == basis
    x = np.array([0.1, 0.2, 0.3])
    np.testing.assert_array_equal(again.lift(x), basis.lift(x))


def test_lift_is_pure():
    basis = L.make_basis(4, quadratic=True, trig=[1.0])
    x = np.array([0.5, -0.2, 3.0, 1.1])
    assert basis.lift(x).tobytes() == basis.lift(x.copy()).tobytes()


def test_gram_single_pair():
    pairs = L.SnapshotPairs([[1.0]], [[2.0]])
    G, A = L.gram_matrices(pairs, L.BasisSpec(1, (L.identity(0),)))
    np.testing.assert_array_equal(G, [[1.0]])
    np.testing.assert_array_equal(A, [[2.0]])


def test_gram_identical_states_gives_A_equal_G():
    xs = np.tile([[0.4, -1.0]], (6, 1))
    G, A = L.gram_matrices(L.SnapshotPairs(xs, xs), poly2())
    np.testing.assert_array_equal(A, G)


def test_gram_matches_summation_oracle():
    rng = np.random.default_rng(3)
    xs, ys = rng.normal(size=(50, 2)), rng.normal(size=(50, 2))
    basis = L.make_basis(2, quadratic=True, constant_term=True)
    G, A = L.gram_matrices(L.SnapshotPairs(xs, ys), basis)
    G_ref = np.zeros((6, 6))
    A_ref = np.zeros((6, 6))
    for x, y in zip(xs, ys):
        px = [x[0], x[1], x[0] * x[0], x[0] * x[1], x[1] * x[1], 1.0]
        py = [y[0], y[1], y[0] * y[0], y[0] * y[1], y[1] * y[1], 1.0]
        for a in range(6):
            for b in range(6):
                G_ref[a, b] += px[a] * px[b] / 50
                A_ref[a, b] += py[a] * px[b] / 50
    np.testing.assert_allclose(G, G_ref, rtol=0, atol=1e-12)
    np.testing.assert_allclose(A, A_ref, rtol=0, atol=1e-12)
    assert np.all(np.linalg.eigvalsh(G) > -1e-12)


def test_fit_scalar_decay():
    x = 3.0 * 0.5 ** np.arange(21)
    model = L.fit_koopman(L.SnapshotPairs.from_trajectory(x), L.BasisSpec(1, (L.identity(0),)), ridge=0.0)
    assert abs(model.K[0, 0] - 0.5) < 1e-10


def test_fit_identity_dynamics_reproduces_samples():
    rng = np.random.default_rng(0)
    xs = rng.normal(size=(30, 2))
    basis = L.make_basis(2, quadratic=True)
    model = L.fit_koopman(L.SnapshotPairs(xs, xs), basis)
    px = basis.lift(xs)
    np.testing.assert_allclose(px @ model.K.T, px, atol=1e-6)


def test_fit_linear_system_matches_normal_equations():
    rng = np.random.default_rng(11)
    M = rng.normal(size=(2, 2)) * 0.6
    xs = rng.normal(size=(40, 2))
    ys = xs @ M.T
    model = L.fit_koopman(L.SnapshotPairs(xs, ys), L.make_basis(2), ridge=0.0)
    np.testing.assert_allclose(model.K, M, atol=1e-8)
    # independent route: normal equations of the stacked regression
    K_ne = np.linalg.solve(xs.T @ xs, xs.T @ ys).T
    np.testing.assert_allclose(model.K, K_ne, atol=1e-8)


def test_rank_deficient_without_pinv_raises():
    xs = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    pairs = L.SnapshotPairs(xs, 0.5 * xs)
    with pytest.raises(NumericalRankError):
        L.fit_koopman(pairs, L.make_basis(2), ridge=0.0, allow_pinv=False)
    model = L.fit_koopman(pairs, L.make_basis(2), ridge=0.0)
    np.testing.assert_allclose(model.K @ xs.T, 0.5 * xs.T, atol=1e-10)


def test_ridge_formula():
    rng = np.random.default_rng(5)
    xs, ys = rng.normal(size=(12, 3)), rng.normal(size=(12, 3))
    basis = L.make_basis(3)
    G, A = L.gram_matrices(L.SnapshotPairs(xs, ys), basis)
    model = L.fit_koopman(L.SnapshotPairs(xs, ys), basis, ridge=0.3)
    np.testing.assert_allclose(model.K, A @ np.linalg.inv(G + 0.3 * np.eye(3)), atol=1e-12)


def test_normalisation_does_not_change_K():
    rng = np.random.default_rng(8)
    xs, ys = rng.normal(size=(25, 2)), rng.normal(size=(25, 2))
    basis = L.make_basis(2, quadratic=True)
    G, A = L.gram_matrices(L.SnapshotPairs(xs, ys), basis)
    K1 = L.solve_operator(G, A, ridge=0.0)
    K2 = L.solve_operator(G * 25 / 26, A * 25 / 26, ridge=0.0)
    np.testing.assert_allclose(K1, K2, atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_least_squares_optimality(seed):
    rng = np.random.default_rng(seed)
    xs, ys = rng.normal(size=(30, 2)), rng.normal(size=(30, 2))
    basis = L.make_basis(2, quadratic=True)
    pairs = L.SnapshotPairs(xs, ys)
    model = L.fit_koopman(pairs, basis, ridge=0.0)
    best = model.residual(pairs)
    for _ in range(5):
        other = model.K + rng.normal(size=model.K.shape)
        assert L.koopman_objective(other, pairs, basis) >= best - 1e-9


def test_gram_linearity_over_concatenation():
    rng = np.random.default_rng(2)
    basis = L.make_basis(2, quadratic=True, constant_term=True)
    p1 = L.SnapshotPairs(rng.normal(size=(17, 2)), rng.normal(size=(17, 2)))
    p2 = L.SnapshotPairs(rng.normal(size=(9, 2)), rng.normal(size=(9, 2)))
    both = L.SnapshotPairs(np.vstack([p1.xs, p2.xs]), np.vstack([p1.ys, p2.ys]))
    G1, A1 = L.gram_matrices(p1, basis)
    G2, A2 = L.gram_matrices(p2, basis)
    G = (17 * G1 + 9 * G2) / 26
    A = (17 * A1 + 9 * A2) / 26
    np.testing.assert_allclose(
        L.fit_koopman(both, basis, ridge=0.0).K, L.solve_operator(G, A, ridge=0.0), atol=1e-9
    )


def test_predict_identity_and_decay():
    basis = L.make_basis(2)
    eye = L.KoopmanModel(np.eye(2), basis)
    np.testing.assert_array_equal(L.predict(eye, [1.5, -2.0], 5), np.tile([1.5, -2.0], (5, 1)))
    half = L.KoopmanModel([[0.5]], L.make_basis(1))
    np.testing.assert_array_equal(L.predict(half, [8.0], 3), [[4.0], [2.0], [1.0]])


def test_predict_rotation_matches_closed_form():
    th = 0.05
    R = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    x0 = np.array([1.0, 0.25])
    traj = [x0]
    for _ in range(60):
        traj.append(R @ traj[-1])
    model = L.fit_koopman(L.SnapshotPairs.from_trajectory(np.array(traj)), L.make_basis(2), ridge=0.0)
    pred = L.predict(model, x0, 100)
    exact = np.array([np.linalg.matrix_power(R, k) @ x0 for k in range(1, 101)])
    np.testing.assert_allclose(pred, exact, atol=1e-6)


def test_predict_divergence_reports_step():
    model = L.KoopmanModel([[1e200]], L.make_basis(1))
    with pytest.raises(DivergenceError) as info:
        L.predict(model, [1e200], 4)
    assert info.value.step == 1


def test_relift_prediction():
    basis = L.BasisSpec(1, (L.identity(0), L.product(0, 0)))
    K = np.array([[0.5, 0.0], [0.0, 0.0]])
    out = L.predict(L.KoopmanModel(K, basis), [4.0], 3, relift=True)
    np.testing.assert_array_equal(out[:, 0], [2.0, 1.0, 0.5])


def test_model_save_load(tmp_path):
    basis = L.make_basis(2, quadratic=True, trig=[1.0])
    K = np.random.default_rng(0).normal(size=(basis.dim, basis.dim))
    model = L.KoopmanModel(K, basis, ridge=1e-6)
    model.save(tmp_path / "m.npz")
    again = L.KoopmanModel.load(tmp_path / "m.npz")
    assert again.basis == basis and again.ridge == 1e-6
    np.testing.assert_array_equal(again.K, K)
