import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import solve_continuous_are

from kooprobust.identify import BilinearModel, ErrorBound
from kooprobust.hjsolve import AnalyticPolicy, ZeroPolicy
from kooprobust.lifting import lift, make_dictionary
from kooprobust.plants import CostWeights, benchmark_plant, linear_plant
from kooprobust.simulate import (MultisineExcitation, collect_data, integrate, integrate_batch,
                                 integrate_lifted, sinusoidal_noise, worst_case_error)

W2 = CostWeights(np.eye(2), np.eye(1), np.eye(2))


def _end_state(h):
    plant = benchmark_plant()
    pol = AnalyticPolicy(plant.optimal_policy, 1)
    return integrate(plant, pol, [-1.5, -1.2], 2.0, h, W2).states[-1]


def test_rk4_order_ratio():
    a, b, c = (_end_state(h) for h in (0.1, 0.05, 0.025))
    ratio = np.linalg.norm(a - b) / np.linalg.norm(b - c)
    assert 8.0 <= ratio <= 32.0


def test_optimal_cost_matches_value_function():
    plant = benchmark_plant()
    pol = AnalyticPolicy(plant.optimal_policy, 1)
    X0 = np.array([[-1.5, -1.2], [0.2, -1.4]])
    for x0, tr in zip(X0, integrate_batch(plant, pol, X0, 20.0, 1e-3, W2)):
        assert tr.cost == pytest.approx(float(plant.optimal_value(x0)[0]), rel=1e-4)


def test_origin_costs_nothing():
    plant = benchmark_plant()
    tr = integrate(plant, AnalyticPolicy(plant.optimal_policy, 1), [0.0, 0.0], 1.0, 1e-2, W2)
    assert tr.cost == 0.0 and np.all(tr.states == 0.0)


def test_linear_lqr_cost_is_quadratic_form():
    A = np.array([[0.0, 1.0], [2.0, -1.0]])
    B = np.array([[0.0], [1.0]])
    P = solve_continuous_are(A, B, np.eye(2), np.eye(1))
    K = B.T @ P
    tr = integrate(linear_plant(A, B), AnalyticPolicy(lambda X: -X @ K.T, 1), [1.0, -0.5], 30.0, 1e-3, W2)
    x0 = np.array([1.0, -0.5])
    assert tr.cost == pytest.approx(0.5 * x0 @ P @ x0, rel=1e-5)


def test_divergence_is_flagged():
    plant = linear_plant([[1.0, 0.0], [0.0, 1.0]], [[0.0], [1.0]])
    tr = integrate(plant, ZeroPolicy(1), [1.0, 1.0], 20.0, 1e-2, W2, cap=10.0)
    assert tr.divergent and tr.cost == np.inf and "exceeded" in tr.message
    assert tr.times[-1] < 20.0


def test_batch_rows_independent():
    plant = linear_plant([[1.0, 0.0], [0.0, -1.0]], [[0.0], [1.0]])
    trs = integrate_batch(plant, ZeroPolicy(1), [[1.0, 0.0], [0.0, 1.0]], 10.0, 1e-2, W2, cap=10.0)
    assert trs[0].divergent and not trs[1].divergent
    # trapezoid error on e^{-2t} is (2h)^2/12 relative
    assert trs[1].cost == pytest.approx(0.25 * (1 - np.exp(-20.0)), rel=4e-5)


def test_invalid_step():
    with pytest.raises(ValueError):
        integrate(benchmark_plant(), ZeroPolicy(1), [1.0, 1.0], 1.0, 0.0, W2)


def test_lifted_integration_of_linear_model():
    A = np.array([[-1.0, 0.3], [0.0, -2.0]])
    model = BilinearModel(A, np.zeros((2, 1)), [np.zeros((2, 2))])
    tr = integrate_lifted(model, ZeroPolicy(1), [1.0, 1.0], 1.0, 1e-3, W2)
    from scipy.linalg import expm
    np.testing.assert_allclose(tr.lifted[-1], expm(A) @ [1.0, 1.0], rtol=1e-10)


def test_manifold_integration_stays_on_manifold():
    dic = make_dictionary(2, 3)
    rng = np.random.default_rng(0)
    model = BilinearModel(-np.eye(9) + 0.1 * rng.normal(size=(9, 9)), rng.normal(size=(9, 1)),
                          [0.1 * rng.normal(size=(9, 9))])
    z0 = lift(dic, [0.5, -0.3])
    W9 = CostWeights.from_state_weights(np.eye(2), np.eye(1), dic.C)
    tr = integrate_lifted(model, ZeroPolicy(1), z0, 1.0, 1e-2, W9, manifold=dic)
    np.testing.assert_allclose(tr.lifted, lift(dic, tr.states), rtol=1e-14)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3), st.floats(-2, 2),
       st.lists(st.floats(-3, 3), min_size=3, max_size=3), st.floats(0, 1), st.floats(0, 1))
def test_worst_case_error_saturates_and_aligns(z, u, p, c1, c2):
    eb = ErrorBound(c1, c2)
    z, p = np.array(z), np.array(p)
    r = worst_case_error(z, [u], p, eb)
    if np.linalg.norm(p) < 1e-9:
        assert np.all(r == 0)
        return
    mag = c1 * np.linalg.norm(z) + c2 * abs(u)
    assert np.linalg.norm(r) == pytest.approx(mag, rel=1e-12, abs=1e-15)
    assert r @ p == pytest.approx(mag * np.linalg.norm(p), rel=1e-12, abs=1e-15)


def test_worst_case_error_zero_at_origin():
    r = worst_case_error(np.zeros(3), np.zeros(1), np.ones(3), ErrorBound(0.3, 0.3))
    assert np.all(r == 0)


def _collect(T, noise=None, seed=0):
    rng = np.random.default_rng(seed)
    S = -(-T // 25)
    exc = MultisineExcitation(S, [0.15, 0.09], [0.2, 0.55], 0.6, rng)
    init = rng.uniform(-1.2, 1.2, (S, 2))
    return collect_data(benchmark_plant(), exc, noise, make_dictionary(2, 3), T, 0.02, init)


def test_collection_noise_free_derivatives_exact():
    s = _collect(200)
    assert s.X.shape == (200, 2) and s.U.shape == (200, 1) and len(s) == 200
    np.testing.assert_allclose(s.Xdot, benchmark_plant().rhs(s.X, s.U), rtol=1e-14)


def test_collection_noise_is_the_stated_signal():
    d = sinusoidal_noise(0.01, 0.4)
    s = _collect(100, d)
    np.testing.assert_allclose(s.Xdot - benchmark_plant().rhs(s.X, s.U), d(s.t), atol=1e-15)
    assert np.allclose(np.linalg.norm(d(s.t), axis=1), 0.01)


def test_collection_deterministic():
    a, b = _collect(150, seed=3), _collect(150, seed=3)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.U, b.U)


def test_collection_partial_segment_and_errors():
    assert len(_collect(37)) == 37
    with pytest.raises(ValueError):
        _collect(0)
    with pytest.raises(ValueError):
        collect_data(benchmark_plant(), lambda t: np.zeros_like(t), None, None, 100, 0.02,
                     np.zeros((1, 2)))


def test_noise_requires_two_dimensions():
    with pytest.raises(ValueError):
        sinusoidal_noise(0.01, 0.4, n=3)


def test_trajectory_csv(tmp_path):
    plant = benchmark_plant()
    tr = integrate(plant, AnalyticPolicy(plant.optimal_policy, 1), [1.0, 1.0], 0.1, 1e-2, W2)
    tr.to_csv(tmp_path / "t.csv")
    data = np.loadtxt(tmp_path / "t.csv", delimiter=",", skiprows=1)
    assert data.shape == (11, 6)
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "t,x_1,x_2,u_1,cost_cum,err_norm"
